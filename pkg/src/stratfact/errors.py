"""Exception types shared across the package."""

import numpy as np


class DomainError(ValueError):
    """An argument lies outside the domain an operation accepts."""


class DataError(ValueError):
    """Malformed or inconsistent input data (CSV parsing, validation)."""

    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class PreconditionError(ValueError):
    """A sample-size requirement of an estimator is not met."""

    def __init__(self, message, cells=()):
        self.cells = list(cells)
        super().__init__(message)


class SingularMatrixError(np.linalg.LinAlgError):
    """Cholesky factorisation met a non-positive pivot.

    ``pivot`` is 1-based, ``context`` names what was being factorised.
    """

    def __init__(self, pivot, context=None, detail=None):
        self.pivot = pivot
        self.context = context
        msg = f"matrix is not positive definite (pivot {pivot})"
        if context:
            msg = f"{context}: {msg}"
        if detail:
            msg = f"{msg}; {detail}"
        super().__init__(msg)
