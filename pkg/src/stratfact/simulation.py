"""Finite-population scenarios, oracle moments, exact enumeration and the
Monte Carlo replication harness.

A :class:`PotentialPopulation` is a frozen science table: every unit's
potential outcome under every arm plus covariates and the fixed
per-stratum allocation.  Monte Carlo randomness comes only from the
assignment.
"""

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from . import estimators as est_mod
from .dataset import ObservedDataset, summarize
from .design import AssignmentPlan, assign_treatments, build_design
from .errors import DomainError, PreconditionError
from .inference import wald_intervals, wald_region
from .numerics import hash64, make_rng, replication_seed, sample_mvn, solve_spd

ENUMERATION_BUDGET = 10 ** 6

# Arm labels in the order outcomes are generated: {-1,-1}, {-1,+1}, {+1,-1}, {+1,+1}.
DGP_LEVELS = ((-1, -1), (-1, 1), (1, -1), (1, 1))

SCENARIO_DEFAULTS = {
    1: {"M": 20, "n_m": 12},
    2: {"M": 2, "n_m": 108},
    3: {"M": 2, "n_m": 108},
    4: {"M": 10, "n_m": 40},
}


@dataclass
class PotentialPopulation:
    """Full science table.  Units are grouped by stratum in ascending order."""

    design: object = field(repr=False)
    Y: np.ndarray = field(repr=False)          # (n, Q) in design arm order
    X: np.ndarray = field(repr=False)          # (n, p)
    stratum: np.ndarray = field(repr=False)    # (n,) codes 0..M-1, nondecreasing
    counts: np.ndarray = field(repr=False)     # (M, Q) allocation
    case: object = None
    seed: object = None
    meta: dict = field(default_factory=dict, repr=False)
    stratum_ids: list = None

    def __post_init__(self):
        self.Y = np.asarray(self.Y, dtype=float)
        self.X = np.asarray(self.X, dtype=float).reshape(self.Y.shape[0], -1)
        self.stratum = np.asarray(self.stratum, dtype=np.intp)
        self.counts = np.asarray(self.counts, dtype=int)
        if np.any(np.diff(self.stratum) < 0):
            raise DomainError("population units must be grouped by stratum in ascending order")
        if self.stratum_ids is None:
            self.stratum_ids = list(range(1, self.counts.shape[0] + 1))
        sizes = np.bincount(self.stratum, minlength=self.M)
        if not np.array_equal(sizes, self.counts.sum(axis=1)):
            raise DomainError(f"arm counts {self.counts.sum(axis=1).tolist()} do not match stratum sizes {sizes.tolist()}")
        if np.any(self.counts < 1):
            raise DomainError("every stratum needs at least one unit per arm")

    @property
    def n(self):
        return int(self.Y.shape[0])

    @property
    def M(self):
        return int(self.counts.shape[0])

    @property
    def p(self):
        return int(self.X.shape[1])

    @property
    def n_m(self):
        return self.counts.sum(axis=1)

    @property
    def pi(self):
        return self.n_m / self.n

    @property
    def e(self):
        return self.counts / self.n_m[:, None]

    @property
    def ybar_strata(self):
        """Stratum means of every potential outcome, (M, Q)."""
        return np.stack([self.Y[self.stratum == m].mean(axis=0) for m in range(self.M)])

    @property
    def tau_strata(self):
        return self.design.contrast(self.ybar_strata.T).T

    @property
    def tau(self):
        return self.design.contrast(self.Y.mean(axis=0))

    @property
    def unit_effects(self):
        return self.design.contrast(self.Y.T).T

    def plan(self, seed):
        return AssignmentPlan.from_counts(self.counts, seed, stratum_ids=self.stratum_ids)

    def assign(self, seed):
        return assign_treatments(self.plan(seed))

    def observe(self, arm):
        arm = np.asarray(arm, dtype=np.intp)
        y = self.Y[np.arange(self.n), arm]
        return ObservedDataset(self.design, self.stratum, arm, y, self.X, list(self.stratum_ids),
                               [f"x{j + 1}" for j in range(self.p)])


# -- scenario generation -----------------------------------------------------

def _dgp_to_design(design):
    return np.array([design.arm_of_levels(lv) for lv in DGP_LEVELS])


def _chained_uniform(rng, half_width, p):
    """Four coefficient vectors; each adds an independent U(-w, w) to the previous."""
    return np.cumsum(rng.uniform(-half_width, half_width, size=(4, p)), axis=0)


def _allocation(M, n_m, allocation):
    if allocation is None:
        if n_m % 4:
            raise DomainError(f"equal propensities 1/4 need n_m divisible by 4, got {n_m}")
        return np.full((M, 4), n_m // 4, dtype=int)
    alloc = np.asarray(allocation, dtype=float)
    if alloc.ndim == 1:
        alloc = np.tile(alloc, (M, 1))
    if alloc.shape != (M, 4):
        raise DomainError(f"allocation must have shape (4,) or ({M}, 4)")
    if np.all(alloc < 1):   # propensities rather than counts
        alloc = alloc * n_m
    if not np.allclose(alloc, np.round(alloc)):
        raise DomainError(f"non-integral arm counts {alloc.tolist()}")
    alloc = np.round(alloc).astype(int)
    if np.any(alloc.sum(axis=1) != n_m):
        raise DomainError("allocation rows must sum to the stratum size")
    return alloc


def case4_propensities(M=10):
    """Unequal-propensity ladders, generation order, shape (M, 4)."""
    out = np.zeros((M, 4))
    half = M // 2
    for m in range(1, M + 1):
        if m <= half:
            a = m / (2 * M)
            out[m - 1] = (a, a, 0.5 - a, 0.5 - a)
        else:
            a = (m - half) / (2 * M)
            out[m - 1] = (0.5 - a, 0.5 - a, a, a)
    return out


def generate_scenario(case, seed, M=None, n_m=None, snr=10.0, allocation=None):
    """Frozen population for one of the four simulation scenarios.

    Cases 1-3 use three MVN covariates with unit variances and
    correlations 0.5^|j-l|, outcomes ``X'b1 + exp(X'b2) + noise`` with
    chained uniform coefficients and arm noise variance set so that
    signal variance / noise variance equals ``snr``.  Case 3 redraws the
    coefficients independently for each stratum.  Case 4 uses a scalar
    standard-normal covariate, noise variance 0.01 and the unequal
    propensity ladders.  ``allocation`` overrides the per-stratum arm
    counts (or propensities) in generation order for cases 1-3.
    """
    if case not in SCENARIO_DEFAULTS:
        raise DomainError(f"case must be 1, 2, 3 or 4, got {case!r}")
    M = SCENARIO_DEFAULTS[case]["M"] if M is None else int(M)
    n_m = SCENARIO_DEFAULTS[case]["n_m"] if n_m is None else int(n_m)
    design = build_design(2)
    to_design = _dgp_to_design(design)
    n = M * n_m
    stratum = np.repeat(np.arange(M), n_m)
    rng = make_rng(hash64(int(seed), "coefficients", case))
    noise_rng = make_rng(hash64(int(seed), "noise", case))
    meta = {"snr": snr}

    if case == 4:
        e_dgp = case4_propensities(M)
        counts_dgp = e_dgp * n_m
        if not np.allclose(counts_dgp, np.round(counts_dgp)):
            raise DomainError(f"non-integral arm counts for n_m={n_m}: {counts_dgp[0].tolist()} ...")
        counts_dgp = np.round(counts_dgp).astype(int)
        if np.any(counts_dgp < 1):
            raise DomainError("case 4 allocation leaves an empty arm")
        X = sample_mvn([0.0], [[1.0]], n, hash64(int(seed), "X", case))
        x = X[:, 0]
        e_unit = e_dgp[stratum]
        Y_dgp = np.column_stack([
            -10.0 * e_unit[:, 0] * x,
            -10.0 * e_unit[:, 1] * x,
            10.0 * e_unit[:, 2] * np.exp(e_unit[:, 2] * x),
            10.0 * e_unit[:, 3] * np.exp(e_unit[:, 3] * x),
        ])
        noise_var = np.full(4, 0.01)
        Y_dgp = Y_dgp + noise_rng.standard_normal((n, 4)) * np.sqrt(noise_var)
        meta.update(noise_var=noise_var.tolist(), propensities_dgp=e_dgp.tolist())
    else:
        counts_dgp = _allocation(M, n_m, allocation)
        p = 3
        idx = np.arange(p)
        sigma = 0.5 ** np.abs(idx[:, None] - idx[None, :])
        X = sample_mvn(np.zeros(p), sigma, n, hash64(int(seed), "X", case))
        if case == 3:
            b1 = np.stack([_chained_uniform(rng, 1.0, p) for _ in range(M)])    # (M, 4, p)
            b2 = np.stack([_chained_uniform(rng, 0.1, p) for _ in range(M)])
        else:
            b1 = np.broadcast_to(_chained_uniform(rng, 1.0, p), (M, 4, p))
            b2 = np.broadcast_to(_chained_uniform(rng, 0.1, p), (M, 4, p))
        signal = (np.einsum("ij,iqj->iq", X, b1[stratum])
                  + np.exp(np.einsum("ij,iqj->iq", X, b2[stratum])))
        noise_var = signal.var(axis=0) / snr
        Y_dgp = signal + noise_rng.standard_normal((n, 4)) * np.sqrt(noise_var)
        meta.update(noise_var=noise_var.tolist(), beta_linear=np.asarray(b1).tolist(),
                    beta_exp=np.asarray(b2).tolist(), sigma=sigma.tolist())

    Y = np.empty_like(Y_dgp)
    Y[:, to_design] = Y_dgp
    counts = np.empty_like(counts_dgp)
    counts[:, to_design] = counts_dgp
    return PotentialPopulation(design, Y, X, stratum, counts, case=case, seed=int(seed), meta=meta)


def tiny_population(seed, K=1, sizes=(4,), counts=None, p=1, additive=False):
    """Small random science table for exact-enumeration checks.

    ``counts`` defaults to the most balanced allocation with at least one
    unit per arm.  With ``additive=True`` unit-level effects are constant
    within each stratum.
    """
    design = build_design(K)
    Q = design.Q
    rng = make_rng(hash64(int(seed), "tiny"))
    sizes = [int(s) for s in sizes]
    if counts is None:
        counts = []
        for s in sizes:
            if s < Q:
                raise DomainError(f"stratum size {s} is smaller than Q={Q}")
            row = np.full(Q, s // Q)
            row[: s % Q] += 1
            counts.append(row)
    counts = np.asarray(counts, dtype=int)
    n = sum(sizes)
    stratum = np.repeat(np.arange(len(sizes)), sizes)
    X = rng.standard_normal((n, p))
    base = X @ rng.normal(size=p) + rng.normal(size=len(sizes))[stratum] + rng.normal(size=n)
    if additive:
        shifts = rng.normal(size=(len(sizes), Q))
        Y = base[:, None] + shifts[stratum]
    else:
        Y = base[:, None] + rng.normal(size=(n, Q)) + X @ rng.normal(size=(p, Q))
    return PotentialPopulation(design, Y, X, stratum, counts, case="tiny", seed=int(seed))


# -- oracle moments ----------------------------------------------------------

@dataclass
class OracleMoments:
    source: str
    neyman_limit: np.ndarray
    scaled_cov: np.ndarray
    effect_var_strata: np.ndarray   # (M, F, F)
    arm_var: np.ndarray         # (M, Q) within-stratum variances of R(q)
    arm_cov: np.ndarray         # (M, Q, Q) covariances between R(q) and R(q')
    R: np.ndarray = field(repr=False)
    coefficients: object = None


def _stratum_cov(values, stratum, M):
    """Per-stratum covariance (divisor n_m - 1) of the columns of ``values``."""
    out = []
    for m in range(M):
        block = values[stratum == m]
        dev = block - block.mean(axis=0)
        out.append(dev.T @ dev / (block.shape[0] - 1))
    return np.stack(out)


def population_coefficients(pop, source):
    """Population adjustment vectors for the epsilon, eta and mu decompositions."""
    M, Q, p = pop.M, pop.design.Q, pop.p
    joint = _stratum_cov(np.column_stack([pop.X, pop.Y]), pop.stratum, M)
    S_xx = joint[:, :p, :p]
    S_xy = joint[:, :p, p:]                  # (M, p, Q)
    e, pi = pop.e, pop.pi
    if source == "epsilon":
        w = (1.0 - e) / e * pi[:, None]
        return np.stack([solve_spd(np.einsum("m,mjk->jk", w[:, q], S_xx), w[:, q] @ S_xy[:, :, q])
                         for q in range(Q)])                                         # (Q, p)
    if source == "eta":
        inv_e = 1.0 / e
        A = np.einsum("m,mjk->jk", pi * inv_e.sum(axis=1), S_xx)
        b = np.einsum("m,mq,mjq->j", pi, inv_e, S_xy)
        return solve_spd(A, b)                                                       # (p,)
    if source == "mu":
        return np.stack([solve_spd(S_xx[m], S_xy[m]).T for m in range(M)])          # (M, Q, p)
    raise DomainError(f"no population coefficients for source {source!r}")


def population_residuals(pop, source="Y"):
    """Transformed science table R_i(q) for the chosen source, (n, Q)."""
    if source == "Y":
        return pop.Y.copy(), None
    coef = population_coefficients(pop, source)
    M = pop.M
    xbar = np.stack([pop.X[pop.stratum == m].mean(axis=0) for m in range(M)])
    ybar = pop.ybar_strata
    dX = pop.X - xbar[pop.stratum]
    if source == "epsilon":
        fit = dX @ coef.T
    elif source == "eta":
        fit = (dX @ coef)[:, None]
    else:
        fit = np.einsum("ij,iqj->iq", dX, coef[pop.stratum])
    return pop.Y - ybar[pop.stratum] - fit, coef


def oracle_moments(pop, source="Y"):
    """Finite-population Neyman limit, n times the exact covariance, and per-stratum effect covariances."""
    design = pop.design
    R, coef = population_residuals(pop, source)
    arm_cov = _stratum_cov(R, pop.stratum, pop.M)
    S2 = np.einsum("mqq->mq", arm_cov)
    G = design.G.astype(float)
    c2 = design.scale ** 2
    w = pop.pi @ (S2 / pop.e)
    neyman_limit = c2 * (G * w) @ G.T
    effect_var_strata = c2 * np.einsum("fq,mqr,gr->mfg", G, arm_cov, G)
    scaled_cov = neyman_limit - np.einsum("m,mfg->fg", pop.pi, effect_var_strata)
    return OracleMoments(source, neyman_limit, scaled_cov, effect_var_strata, S2, arm_cov, R, coef)


def arm_mean_covariance(pop, R=None):
    """Covariance of the stratified arm-mean vector from the block formula.

    sum_m pi_m^2 [diag(S2_m(q) / n_mq) - S_m / n_m] for a scalar table R.
    """
    R = pop.Y if R is None else R
    S = _stratum_cov(R, pop.stratum, pop.M)
    out = np.zeros(S.shape[1:])
    for m in range(pop.M):
        out += pop.pi[m] ** 2 * (np.diag(np.diag(S[m]) / pop.counts[m]) - S[m] / pop.n_m[m])
    return out


# -- exact enumeration -------------------------------------------------------

def multiset_arrangements(counts):
    """Every distinct arm vector with ``counts[q]`` units on arm q, (A, sum(counts))."""
    counts = [int(c) for c in counts]
    n = sum(counts)
    rows = []

    def fill(q, free, current):
        if q == len(counts) - 1:
            for i in free:
                current[i] = q
            rows.append(current.copy())
            return
        for chosen in combinations(free, counts[q]):
            for i in chosen:
                current[i] = q
            rest = [i for i in free if i not in chosen]
            fill(q + 1, rest, current)

    fill(0, list(range(n)), np.zeros(n, dtype=np.int8))
    return np.array(rows, dtype=np.int8).reshape(-1, n)


def assignment_count(counts):
    total = 1
    for row in np.asarray(counts, dtype=int):
        total *= math.factorial(int(row.sum())) // math.prod(math.factorial(int(c)) for c in row)
    return total


def all_assignments(pop, budget=ENUMERATION_BUDGET):
    """Every admissible stratified assignment as an (N, n) arm array."""
    total = assignment_count(pop.counts)
    if total > budget:
        raise DomainError(f"exact enumeration needs {total} assignments, budget is {budget}")
    per = [multiset_arrangements(row) for row in pop.counts]
    grids = np.meshgrid(*[np.arange(len(a)) for a in per], indexing="ij")
    return np.concatenate([a[g.ravel()] for a, g in zip(per, grids)], axis=1)


def _batched_arm_means(pop, arms):
    n = pop.n
    Yobs = pop.Y[np.arange(n)[None, :], arms]
    Q = pop.design.Q
    out = np.zeros((arms.shape[0], Q))
    for m in range(pop.M):
        units = np.flatnonzero(pop.stratum == m)
        a = arms[:, units]
        yo = Yobs[:, units]
        for q in range(Q):
            out[:, q] += pop.pi[m] * np.where(a == q, yo, 0.0).sum(axis=1) / pop.counts[m, q]
    return out


@dataclass
class ExactMoments:
    mean: np.ndarray
    cov: np.ndarray
    count: int


def enumerate_exact(pop, estimator="unadj", budget=ENUMERATION_BUDGET):
    """Exact randomization mean and covariance of an estimator.

    ``estimator`` is ``"arm_means"`` (stratified arm-mean vector),
    ``"unadj"`` (both evaluated in batch), another method name, or a
    callable taking an :class:`ObservedDataset` and returning a vector.
    All admissible assignments are equally likely.
    """
    arms = all_assignments(pop, budget)
    if estimator in ("arm_means", "unadj"):
        values = _batched_arm_means(pop, arms)
        if estimator == "unadj":
            values = pop.design.contrast(values.T).T
    else:
        if isinstance(estimator, str):
            method = estimator
            estimator = lambda data: est_mod.estimate(summarize(data), method).tau_hat  # noqa: E731
        values = np.array([np.asarray(estimator(pop.observe(a)), dtype=float) for a in arms])
    mean = values.mean(axis=0)
    dev = values - mean
    return ExactMoments(mean, dev.T @ dev / values.shape[0], int(values.shape[0]))


# -- Monte Carlo -------------------------------------------------------------

@dataclass
class MetricsTable:
    rows: list
    regions: dict
    absent: dict
    reps: int
    master_seed: int
    alpha: float
    tau: list
    labels: list
    region_effects: list

    def get(self, method, effect, metric):
        for row in self.rows:
            if row["method"] == method and row["effect"] == effect:
                return row[metric]
        raise KeyError((method, effect, metric))

    def to_dict(self):
        return {
            "reps": self.reps,
            "master_seed": self.master_seed,
            "alpha": self.alpha,
            "tau": self.tau,
            "labels": self.labels,
            "region_effects": [f + 1 for f in self.region_effects],
            "effects": self.rows,
            "regions": self.regions,
            "absent": self.absent,
        }


@dataclass
class _MethodDraws:
    tau: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    area: np.ndarray
    log_volume: np.ndarray
    error: list = field(default_factory=list)


def _applicability(pop, method):
    if method == "inter" and np.any(pop.counts < pop.p + 2):
        return f"inter requires n_[m]q >= p+2 = {pop.p + 2} in every cell"
    if method in ("adj", "cond", "inter") and np.any(pop.counts < 2):
        return f"{method} requires n_[m]q >= 2 in every cell"
    if np.any(pop.counts < 2):
        return "variance estimation requires n_[m]q >= 2 in every cell"
    return None


def default_threads():
    value = os.environ.get("STRATFACT_THREADS", "1")
    try:
        threads = int(value)
    except ValueError:
        threads = 1
    if threads == 0:
        return os.cpu_count() or 1
    return max(1, threads)


def run_monte_carlo(pop, methods=("unadj", "adj", "cond", "inter"), reps=10000, alpha=0.05,
                    master_seed=0, threads=None, region_effects=None, keep_draws=False):
    """Repeat the randomization ``reps`` times and score every method.

    Replication ``r`` draws its assignment from ``hash64(master_seed, r)``;
    results are stored by replication index so they do not depend on the
    thread count.  Confidence regions cover ``region_effects`` (default:
    the main effects).  Returns a :class:`MetricsTable`, plus the per-method
    draws when ``keep_draws`` is set.
    """
    if reps < 1:
        raise DomainError("reps must be at least 1")
    design = pop.design
    F = design.F
    region_effects = list(design.main_effects if region_effects is None else region_effects)
    absent = {}
    active = []
    for m in methods:
        if m not in est_mod.METHODS:
            raise DomainError(f"unknown method {m!r}")
        reason = _applicability(pop, m)
        if reason:
            absent[m] = reason
        else:
            active.append(m)
    draws = {m: _MethodDraws(np.full((reps, F), np.nan), np.full((reps, F), np.nan),
                             np.full((reps, F), np.nan), np.full(reps, np.nan), np.full(reps, np.nan))
             for m in active}

    def run_one(r):
        data = pop.observe(pop.assign(replication_seed(master_seed, r)))
        summ = summarize(data)
        for m in active:
            d = draws[m]
            if d.error:
                continue
            try:
                e = est_mod.estimate(summ, m, design)
                ivs = wald_intervals(e, alpha)
                reg = wald_region(e, alpha, region_effects)
            except (PreconditionError, np.linalg.LinAlgError) as exc:
                d.error.append(f"replication {r}: {exc}")
                continue
            d.tau[r] = e.tau_hat
            d.lo[r] = [iv.lo for iv in ivs]
            d.hi[r] = [iv.hi for iv in ivs]
            d.area[r] = reg.area if reg.area is not None else np.nan
            d.log_volume[r] = reg.log_volume

    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1:
        for r in range(reps):
            run_one(r)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_one, range(reps)))

    for m in list(active):
        if draws[m].error:
            absent[m] = draws[m].error[0]
            active.remove(m)

    table = _aggregate(pop, draws, active, absent, reps, master_seed, alpha, region_effects)
    if keep_draws:
        return table, {m: draws[m].tau for m in active}
    return table


def _aggregate(pop, draws, active, absent, reps, master_seed, alpha, region_effects):
    tau = pop.tau
    labels = pop.design.effect_labels
    stats = {}
    for m in active:
        d = draws[m]
        mean = d.tau.mean(axis=0)
        bias = mean - tau
        sd = np.sqrt(((d.tau - mean) ** 2).mean(axis=0))
        rmse = np.sqrt(((d.tau - tau) ** 2).mean(axis=0))
        cp = ((d.lo <= tau) & (tau <= d.hi)).mean(axis=0)
        length = (d.hi - d.lo).mean(axis=0)
        stats[m] = (bias, sd, rmse, cp, length)
    base = stats.get("unadj")
    rows = []
    for f, label in enumerate(labels):
        for m in active:
            bias, sd, rmse, cp, length = stats[m]
            rows.append({
                "effect": f + 1,
                "label": label,
                "method": m,
                "bias": float(bias[f]),
                "sd": float(sd[f]),
                "rmse": float(rmse[f]),
                "rmse_ratio": None if base is None else float(rmse[f] / base[2][f]),
                "cp": float(cp[f]),
                "ci_length": float(length[f]),
                "length_ratio": None if base is None else float(length[f] / base[4][f]),
            })
    regions = {}
    base_area = float(draws["unadj"].area.mean()) if "unadj" in active else None
    for m in active:
        area = draws[m].area
        mean_area = None if np.all(np.isnan(area)) else float(area.mean())
        regions[m] = {
            "area": mean_area,
            "area_ratio": (None if mean_area is None or base_area is None else mean_area / base_area),
            "mean_log_volume": float(draws[m].log_volume.mean()),
        }
    return MetricsTable(rows, regions, absent, int(reps), int(master_seed), float(alpha),
                        [float(t) for t in tau], list(labels), list(region_effects))


def write_draws_csv(draws, labels, dest):
    """One row per (replication, method) with the estimated effect vector."""
    with open(dest, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rep", "method"] + list(labels))
        for method, values in draws.items():
            for r, row in enumerate(values):
                w.writerow([r, method] + [repr(float(v)) for v in row])
