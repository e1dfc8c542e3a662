"""Neyman-type variance estimation and Wald intervals/regions."""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, PreconditionError, SingularMatrixError
from .numerics import chi2_quantile, cholesky, inverse_spd, normal_quantile, symmetrize


@dataclass
class VarianceEstimate:
    vhat: np.ndarray
    source: str
    s2: np.ndarray


def neyman_weights(s2, pi, e):
    """sum_m pi_m s2_mq / e_mq for every arm q."""
    return np.asarray(pi) @ (np.asarray(s2) / np.asarray(e))


def neyman_variance(s2, pi, e, design, source="Y"):
    """Conservative estimate of the covariance of sqrt(n) * tau_hat.

    ``s2`` is the (M, Q) table of within-cell sample variances of the
    chosen source (raw outcomes or residuals); ``pi`` and ``e`` are the
    stratum weights and propensities.
    """
    s2 = np.asarray(s2, dtype=float)
    bad = np.argwhere(~np.isfinite(s2))
    if len(bad):
        cells = [(int(m) + 1, int(q) + 1) for m, q in bad]
        raise PreconditionError(
            f"variance needs n_[m]q >= 2 in every cell; undefined for (stratum, arm) {cells[:5]}"
            + (" ..." if len(cells) > 5 else ""),
            cells=cells,
        )
    w = neyman_weights(s2, pi, e)
    G = design.G.astype(float)
    vhat = design.scale ** 2 * (G * w) @ G.T
    return VarianceEstimate(vhat=symmetrize(vhat), source=source, s2=s2)


@dataclass
class Interval:
    effect: int
    label: str
    estimate: float
    lo: float
    hi: float
    level: float


def _check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha!r}")


def wald_intervals(est, alpha=0.05):
    """Per-effect intervals tau_f +/- z_{1-alpha/2} sqrt(vcov_ff)."""
    _check_alpha(alpha)
    if est.vcov is None:
        raise PreconditionError("no variance estimate: some cells have fewer than two units",
                                cells=est.diagnostics.get("cells_below_min", []))
    z = normal_quantile(1.0 - alpha / 2.0)
    se = np.sqrt(np.clip(np.diag(est.vcov), 0.0, None))
    return [
        Interval(f, est.labels[f], float(t), float(t - z * s), float(t + z * s), 1.0 - alpha)
        for f, (t, s) in enumerate(zip(est.tau_hat, se))
    ]


@dataclass
class WaldRegion:
    """Ellipsoid {mu : (tau - mu)' vcov^{-1} (tau - mu) <= threshold}.

    ``vcov`` is already divided by n, so ``precision = inv(vcov)`` equals
    n * inv(V_hat).
    """

    center: np.ndarray
    vcov: np.ndarray
    threshold: float
    effects: list
    labels: list
    alpha: float

    def __post_init__(self):
        self._L = cholesky(self.vcov, context="variance estimate (region undefined)")

    @property
    def dim(self):
        return len(self.center)

    @property
    def precision(self):
        return inverse_spd(self.vcov)

    def quadratic_form(self, mu):
        diff = self.center - np.asarray(mu, dtype=float)
        z = np.linalg.solve(self._L, diff)
        return float(z @ z)

    def contains(self, mu):
        return self.quadratic_form(mu) <= self.threshold

    @property
    def log_det(self):
        return 2.0 * float(np.sum(np.log(np.diag(self._L))))

    @property
    def area(self):
        """pi * threshold * sqrt(det vcov); only defined in two dimensions."""
        if self.dim != 2:
            return None
        return math.pi * self.threshold * math.exp(0.5 * self.log_det)

    @property
    def log_volume(self):
        """Log volume of the ellipsoid in any dimension."""
        d = self.dim
        return (0.5 * d * math.log(math.pi) - math.lgamma(0.5 * d + 1.0)
                + 0.5 * d * math.log(self.threshold) + 0.5 * self.log_det)


def wald_region(est, alpha=0.05, effects=None):
    """Joint Wald region for all effects or for the ``effects`` subset.

    Raises :class:`SingularMatrixError` when the selected block of the
    variance estimate is not positive definite; the error message reports
    its numerical rank.
    """
    _check_alpha(alpha)
    if est.vcov is None:
        raise PreconditionError("no variance estimate: some cells have fewer than two units",
                                cells=est.diagnostics.get("cells_below_min", []))
    idx = list(range(len(est.tau_hat))) if effects is None else [int(f) for f in effects]
    vcov = symmetrize(est.vcov[np.ix_(idx, idx)])
    threshold = chi2_quantile(len(idx), 1.0 - alpha)
    try:
        return WaldRegion(np.asarray(est.tau_hat, dtype=float)[idx], vcov, threshold, idx,
                          [est.labels[f] for f in idx], alpha)
    except SingularMatrixError as exc:
        rank = int(np.linalg.matrix_rank(vcov)) if vcov.size else 0
        raise SingularMatrixError(exc.pivot, exc.context, f"rank {rank} of {len(idx)}") from None


def result_dict(est, alpha=0.05, region_effects=None):
    """JSON-ready summary of one estimate: point, covariance, intervals, region."""
    out = {
        "method": est.method,
        "K": est.K,
        "F": est.F,
        "n": est.n,
        "M": est.M,
        "labels": list(est.labels),
        "tau_hat": [float(v) for v in est.tau_hat],
        "vcov": None if est.vcov is None else est.vcov.tolist(),
        "intervals": [],
        "region": None,
        "diagnostics": dict(est.diagnostics),
    }
    if est.vcov is None:
        return out
    out["intervals"] = [
        {"effect": iv.effect + 1, "label": iv.label, "estimate": iv.estimate, "lo": iv.lo, "hi": iv.hi}
        for iv in wald_intervals(est, alpha)
    ]
    try:
        reg = wald_region(est, alpha, region_effects)
    except SingularMatrixError as exc:
        out["diagnostics"]["region_error"] = str(exc)
        return out
    region = {
        "effects": [f + 1 for f in reg.effects],
        "threshold": reg.threshold,
        "precision": reg.precision.tolist(),
    }
    if reg.area is not None:
        region["area"] = reg.area
    else:
        region["log_volume"] = reg.log_volume
    out["region"] = region
    return out
