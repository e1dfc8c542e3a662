"""Unadjusted and covariate-adjusted factorial effect estimators.

Every estimator has the form ``2^{-(K-1)} G a`` where ``a`` is a length-Q
vector of (adjusted) stratified arm means:

* ``unadj``  a(q) = Ybar(q)
* ``adj``    a(q) = Ybar(q) - (Xbar(q) - Xbar)' beta(q), beta pooled over
  strata per arm with weights (1 - e)/e * pi / (n_mq - 1)
* ``cond``   a(q) = Ybar(q) - (Xbar(q) - Xbar)' gamma, one gamma shared by
  all arms and effects
* ``inter``  a(q) = sum_m pi_m [Ybar_m(q) - (Xbar_m(q) - Xbar_m)' beta_m(q)]

Variance estimates are Neyman-type over the matching residuals, which are
always centred at the arm-specific stratum sample means.
"""

from dataclasses import dataclass, field

import numpy as np

from . import inference
from .errors import DomainError, PreconditionError
from .numerics import solve_spd, symmetrize

METHODS = ("unadj", "adj", "cond", "inter")
RESIDUAL_KIND = {"unadj": "Y", "adj": "epsilon", "cond": "eta", "inter": "mu"}


@dataclass
class AdjustmentCoefficients:
    """``values`` is (Q, p) for pooled, (p,) for conditional, (M, Q, p) for stratum."""

    kind: str
    values: np.ndarray

    def per_unit(self, data):
        """Coefficient row used for each unit's own arm, shape (n, p)."""
        if self.kind == "pooled":
            return self.values[data.arm]
        if self.kind == "conditional":
            return np.broadcast_to(self.values, (data.n, self.values.shape[0]))
        if self.kind == "stratum":
            return self.values[data.stratum, data.arm]
        raise DomainError(f"unknown coefficient kind {self.kind!r}")

    def per_cell(self, M, Q):
        """Coefficients broadcast to every (stratum, arm) cell, shape (M, Q, p)."""
        if self.kind == "pooled":
            return np.broadcast_to(self.values, (M,) + self.values.shape)
        if self.kind == "conditional":
            return np.broadcast_to(self.values, (M, Q, self.values.shape[0]))
        return self.values


@dataclass
class EffectEstimate:
    method: str
    design: object = field(repr=False)
    tau_hat: np.ndarray
    arm_means: np.ndarray
    vhat: object
    n: int
    M: int
    coefficients: object = None
    residual_s2: object = field(default=None, repr=False)
    diagnostics: dict = field(default_factory=dict)

    @property
    def K(self):
        return self.design.K

    @property
    def F(self):
        return self.design.F

    @property
    def labels(self):
        return self.design.effect_labels

    @property
    def vcov(self):
        """Estimated covariance of tau_hat, V_hat / n."""
        return None if self.vhat is None else self.vhat / self.n


@dataclass
class Residuals:
    kind: str
    values: np.ndarray


def _require_min_count(summ, minimum, what):
    low = np.argwhere(summ.counts < minimum)
    if len(low):
        cells = [(int(m) + 1, int(q) + 1) for m, q in low]
        raise PreconditionError(f"{what} requires n_[m]q >= {minimum}; violated in (stratum, arm) {cells[:5]}"
                                + (" ..." if len(cells) > 5 else ""), cells=cells)


def _cells_below(summ, minimum=2):
    return [(int(m) + 1, int(q) + 1) for m, q in np.argwhere(summ.counts < minimum)]


def _residual_s2(summ, coef_cells):
    """Cell variances of double-centred residuals y - b'x from the summaries.

    s2_y - 2 b's_xy + b's_xx b, exact because residuals have zero cell mean.
    """
    b = coef_cells
    return (summ.s2_y - 2.0 * np.einsum("mqj,mqj->mq", b, summ.s_xy)
            + np.einsum("mqj,mqjk,mqk->mq", b, summ.s_xx, b))


def _finish(method, summ, design, arm_means, coefficients, s2, diagnostics=None):
    design = design or summ.design
    diagnostics = dict(diagnostics or {})
    below = _cells_below(summ)
    vhat = None
    if below:
        diagnostics["cells_below_min"] = below
    else:
        vhat = inference.neyman_variance(s2, summ.pi, summ.e, design, RESIDUAL_KIND[method]).vhat
    return EffectEstimate(
        method=method, design=design, tau_hat=design.contrast(arm_means), arm_means=arm_means,
        vhat=vhat, n=summ.n, M=summ.M, coefficients=coefficients, residual_s2=s2,
        diagnostics=diagnostics,
    )


def estimate_unadjusted(summ, design=None):
    """Stratified difference in means."""
    return _finish("unadj", summ, design, summ.ybar_strat, None, summ.s2_y)


def fit_beta_pooled(summ):
    """Per-arm adjustment vectors from the pooled weighted normal equations."""
    _require_min_count(summ, 2, "adj")
    e, pi = summ.e, summ.pi
    w = (1.0 - e) / e * pi[:, None]             # (n_mq - 1) cancels against the divisor of s_xx
    Q, p = summ.counts.shape[1], summ.p
    beta = np.zeros((Q, p))
    for q in range(Q):
        gram = symmetrize(np.einsum("m,mjk->jk", w[:, q], summ.s_xx[:, q]))
        cross = w[:, q] @ summ.s_xy[:, q]
        beta[q] = solve_spd(gram, cross, context=f"pooled covariate Gram matrix, arm {q + 1}")
    return AdjustmentCoefficients("pooled", beta)


def _adjusted_pooled_means(summ, coef_qp):
    return summ.ybar_strat - np.einsum("qj,qj->q", summ.xbar_strat - summ.xbar_all, coef_qp)


def estimate_adjusted(summ, design=None, beta=None):
    if beta is None:
        beta = fit_beta_pooled(summ)
    M, Q = summ.counts.shape
    means = _adjusted_pooled_means(summ, beta.values)
    s2 = _residual_s2(summ, beta.per_cell(M, Q))
    return _finish("adj", summ, design, means, beta, s2)


def fit_gamma(summ):
    """Shared adjustment vector from stratum covariances weighted by sum_q 1/e."""
    _require_min_count(summ, 2, "cond")
    inv_e = 1.0 / summ.e
    outer = symmetrize(np.einsum("m,mjk->jk", summ.pi * inv_e.sum(axis=1), summ.s_xx_stratum))
    cross = np.einsum("m,mq,mqj->j", summ.pi, inv_e, summ.s_xy)
    gamma = solve_spd(outer, cross, context="conditional covariate matrix")
    return AdjustmentCoefficients("conditional", gamma)


def estimate_cond(summ, design=None, gamma=None):
    if gamma is None:
        gamma = fit_gamma(summ)
    M, Q = summ.counts.shape
    coef = np.broadcast_to(gamma.values, (Q, summ.p))
    means = _adjusted_pooled_means(summ, coef)
    s2 = _residual_s2(summ, gamma.per_cell(M, Q))
    return _finish("cond", summ, design, means, gamma, s2)


def fit_beta_stratum(summ):
    """Separate regression slope in every (stratum, arm) cell.

    Requires at least p + 2 units per cell; below that the pooled methods
    (``adj`` or ``cond``) are the appropriate choice.
    """
    p = summ.p
    low = np.argwhere(summ.counts < p + 2)
    if len(low):
        cells = [(int(m) + 1, int(q) + 1) for m, q in low]
        raise PreconditionError(
            f"inter requires n_[m]q >= p+2 = {p + 2}; violated in (stratum, arm) {cells[:5]}"
            + (" ..." if len(cells) > 5 else "") + "; use adj or cond for small strata",
            cells=cells,
        )
    M, Q = summ.counts.shape
    beta = np.zeros((M, Q, p))
    for m in range(M):
        for q in range(Q):
            beta[m, q] = solve_spd(summ.s_xx[m, q], summ.s_xy[m, q],
                                   context=f"covariate matrix of stratum {m + 1}, arm {q + 1}")
    return AdjustmentCoefficients("stratum", beta)


def estimate_inter(summ, design=None, betas=None):
    if betas is None:
        betas = fit_beta_stratum(summ)
    design = design or summ.design
    b = betas.values
    shift = summ.xbar - summ.xbar_stratum[:, None, :]
    cell_means = summ.ybar - np.einsum("mqj,mqj->mq", shift, b)
    means = summ.pi @ cell_means
    s2 = _residual_s2(summ, b)
    # Variance-estimator reduction relative to unadj: G diag(w) G' with
    # w_q = sum_m pi/e * b's_xx b, PSD exactly when every w_q >= 0.
    quad = np.einsum("mqj,mjk,mqk->mq", b, summ.s_xx_stratum, b)
    w = inference.neyman_weights(quad, summ.pi, summ.e)
    if np.any(w < -1e-12 * max(1.0, float(np.max(np.abs(w))))):
        raise AssertionError(f"variance reduction weights must be nonnegative, got {w}")
    G = design.G.astype(float)
    reduction = design.scale ** 2 * (G * w) @ G.T
    return _finish("inter", summ, design, means, betas, s2, {"variance_reduction": reduction.tolist()})


def compute_residuals(data, summ, coeffs=None, kind="epsilon"):
    """Residual of every unit at its own arm, centred at arm-specific stratum means."""
    if kind not in ("Y", "epsilon", "eta", "mu"):
        raise DomainError(f"unknown residual kind {kind!r}")
    cell = data.cell
    ybar = summ.ybar.ravel()[cell]
    if coeffs is None or data.p == 0:
        return Residuals(kind, data.y - ybar)
    xbar = summ.xbar.reshape(-1, summ.p)[cell]
    b = coeffs.per_unit(data)
    return Residuals(kind, data.y - ybar - np.einsum("ij,ij->i", data.X - xbar, b))


def estimate(summ, method, design=None):
    """Dispatch on method name: unadj, adj, cond or inter."""
    if method == "unadj":
        return estimate_unadjusted(summ, design)
    if method == "adj":
        return estimate_adjusted(summ, design)
    if method == "cond":
        return estimate_cond(summ, design)
    if method == "inter":
        return estimate_inter(summ, design)
    raise DomainError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
