"""Randomization-based design and analysis of stratified 2^K factorial experiments."""

__version__ = "0.1.0"

from .dataset import ObservedDataset, StratumSummaries, ingest_csv, summarize, write_csv
from .design import AssignmentPlan, FactorialDesign, assign_treatments, build_design
from .errors import DataError, DomainError, PreconditionError, SingularMatrixError
from .estimators import METHODS, EffectEstimate, estimate
from .inference import neyman_variance, wald_intervals, wald_region

__all__ = [
    "AssignmentPlan", "DataError", "DomainError", "EffectEstimate", "FactorialDesign", "METHODS",
    "ObservedDataset", "PreconditionError", "SingularMatrixError", "StratumSummaries",
    "assign_treatments", "build_design", "estimate", "ingest_csv", "neyman_variance",
    "summarize", "wald_intervals", "wald_region", "write_csv",
]
