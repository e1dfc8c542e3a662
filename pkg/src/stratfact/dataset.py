"""Observed stratified factorial data and its per-stratum summaries."""

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

REQUIRED_COLUMNS = ("stratum", "arm", "y")


def _stratum_order(ids):
    unique = set(ids)
    try:
        return sorted(unique, key=float)
    except (TypeError, ValueError):
        return sorted(unique, key=str)


@dataclass
class ObservedDataset:
    """One realised experiment.

    ``stratum`` holds 0-based positions into ``stratum_ids`` (sorted),
    ``arm`` holds 0-based design arm indices.  Units keep input order.
    """

    design: object
    stratum: np.ndarray
    arm: np.ndarray
    y: np.ndarray
    X: np.ndarray
    stratum_ids: list
    covariate_names: list = field(default_factory=list)

    def __post_init__(self):
        self.stratum = np.asarray(self.stratum, dtype=np.intp)
        self.arm = np.asarray(self.arm, dtype=np.intp)
        self.y = np.asarray(self.y, dtype=float)
        n = self.y.shape[0]
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(n, -1) if X.size else np.zeros((n, 0))
        self.X = X
        if self.stratum.shape != (n,) or self.arm.shape != (n,) or self.X.shape[0] != n:
            raise DataError("stratum, arm, y and covariates must have one entry per unit")
        if not self.covariate_names:
            self.covariate_names = [f"x{j + 1}" for j in range(self.p)]
        Q = self.design.Q
        if n and (self.arm.min() < 0 or self.arm.max() >= Q):
            raise DataError(f"arm index outside 0..{Q - 1}")
        if n and (self.stratum.min() < 0 or self.stratum.max() >= len(self.stratum_ids)):
            raise DataError("stratum code outside the stratum id list")
        if not np.all(np.isfinite(self.y)) or not np.all(np.isfinite(self.X)):
            raise DataError("outcomes and covariates must be finite")
        counts = np.bincount(self.stratum * Q + self.arm, minlength=self.M * Q).reshape(self.M, Q)
        empty = np.argwhere(counts == 0)
        if len(empty):
            m, q = empty[0]
            raise DataError(
                f"empty stratum-arm cell: stratum {self.stratum_ids[m]!r} has no unit in arm {q + 1}"
            )
        self.counts = counts

    @classmethod
    def from_labels(cls, design, strata, arm, y, X=None, covariate_names=None):
        """Build from raw stratum labels (any hashable) and 0-based arms."""
        strata = list(strata)
        ids = _stratum_order(strata)
        index = {s: i for i, s in enumerate(ids)}
        codes = np.array([index[s] for s in strata], dtype=np.intp)
        if X is None:
            X = np.zeros((len(strata), 0))
        return cls(design, codes, arm, y, X, ids, list(covariate_names or []))

    @property
    def n(self):
        return int(self.y.shape[0])

    @property
    def M(self):
        return len(self.stratum_ids)

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
    def cell(self):
        return self.stratum * self.design.Q + self.arm


@dataclass
class StratumSummaries:
    """Per-(stratum, arm) and per-stratum moments of an observed dataset.

    Sample (co)variances use the n - 1 divisor; entries for cells with a
    single unit are NaN and ``has_variance`` is False there.
    """

    design: object
    counts: np.ndarray          # (M, Q)
    ybar: np.ndarray            # (M, Q)
    xbar: np.ndarray            # (M, Q, p) arm means within stratum
    s2_y: np.ndarray            # (M, Q)
    s_xy: np.ndarray            # (M, Q, p)
    s_xx: np.ndarray            # (M, Q, p, p) arm-specific
    xbar_stratum: np.ndarray    # (M, p) all units of the stratum
    s_xx_stratum: np.ndarray    # (M, p, p) all units, divisor n_m - 1

    @property
    def M(self):
        return self.counts.shape[0]

    @property
    def p(self):
        return self.xbar.shape[2]

    @property
    def n_m(self):
        return self.counts.sum(axis=1)

    @property
    def n(self):
        return int(self.counts.sum())

    @property
    def pi(self):
        return self.n_m / self.n

    @property
    def e(self):
        return self.counts / self.n_m[:, None]

    @property
    def has_variance(self):
        return self.counts >= 2

    @property
    def ybar_strat(self):
        """Stratified arm means sum_m pi_m ybar_m(q), length Q."""
        return self.pi @ self.ybar

    @property
    def xbar_strat(self):
        """Stratified covariate arm means, shape (Q, p)."""
        return np.einsum("m,mqj->qj", self.pi, self.xbar)

    @property
    def xbar_all(self):
        """Overall covariate mean sum_m pi_m xbar_m, shape (p,)."""
        return self.pi @ self.xbar_stratum


def _group_sums(values, order, starts):
    return np.add.reduceat(values[order], starts, axis=0)


def summarize(data):
    """Arm-level and stratum-level moments feeding every estimator."""
    Q = data.design.Q
    M, p = data.M, data.p
    counts = data.counts
    flat = counts.ravel()
    cell = data.cell
    order = np.argsort(cell, kind="stable")
    starts = np.concatenate(([0], np.cumsum(flat)[:-1]))

    ybar = (_group_sums(data.y, order, starts) / flat)
    xbar = _group_sums(data.X, order, starts) / flat[:, None]
    dy = data.y - ybar[cell]
    dX = data.X - xbar[cell]
    with np.errstate(invalid="ignore", divide="ignore"):
        denom = np.where(flat >= 2, flat - 1, np.nan)
        s2_y = _group_sums(dy * dy, order, starts) / denom
        s_xy = _group_sums(dX * dy[:, None], order, starts) / denom[:, None]
        s_xx = _group_sums(dX[:, :, None] * dX[:, None, :], order, starts) / denom[:, None, None]

    n_m = counts.sum(axis=1)
    s_order = np.argsort(data.stratum, kind="stable")
    s_starts = np.concatenate(([0], np.cumsum(n_m)[:-1]))
    xbar_stratum = _group_sums(data.X, s_order, s_starts) / n_m[:, None]
    dXs = data.X - xbar_stratum[data.stratum]
    with np.errstate(invalid="ignore", divide="ignore"):
        s_denom = np.where(n_m >= 2, n_m - 1, np.nan)
        s_xx_stratum = _group_sums(dXs[:, :, None] * dXs[:, None, :], s_order, s_starts) / s_denom[:, None, None]

    return StratumSummaries(
        design=data.design,
        counts=counts,
        ybar=ybar.reshape(M, Q),
        xbar=xbar.reshape(M, Q, p),
        s2_y=s2_y.reshape(M, Q),
        s_xy=s_xy.reshape(M, Q, p),
        s_xx=s_xx.reshape(M, Q, p, p),
        xbar_stratum=xbar_stratum,
        s_xx_stratum=s_xx_stratum,
    )


def cell_variances(data, values):
    """Arm-specific sample variance of ``values`` in every (stratum, arm) cell.

    NaN where the cell holds fewer than two units.
    """
    Q = data.design.Q
    flat = data.counts.ravel()
    cell = data.cell
    values = np.asarray(values, dtype=float)
    sums = np.bincount(cell, weights=values, minlength=flat.size)
    means = sums / flat
    dev = values - means[cell]
    ss = np.bincount(cell, weights=dev * dev, minlength=flat.size)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = ss / np.where(flat >= 2, flat - 1, np.nan)
    return out.reshape(data.M, Q)


# -- CSV ---------------------------------------------------------------------

def _open_text(source):
    if isinstance(source, bytes):
        return io.StringIO(source.decode("utf-8"))
    if hasattr(source, "read"):
        text = source.read()
        return io.StringIO(text.decode("utf-8") if isinstance(text, bytes) else text)
    return open(source, newline="", encoding="utf-8")


def _parse_float(text, row, column):
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise DataError(f"non-numeric value {text!r}", row=row, column=column) from None
    if not math.isfinite(value):
        raise DataError(f"non-finite value {text!r}", row=row, column=column)
    return value


def ingest_csv(source, design, stratum_col="stratum", arm_col="arm", outcome_col="y",
               covariate_cols=None):
    """Read and validate an observed-data CSV.

    ``source`` is a path, raw bytes, or an open text/binary stream.  Arms
    come either from ``arm_col`` (integers 1..Q) or, when that column is
    absent, from level columns ``f1..fK`` holding -1/+1.  Every remaining
    column is a covariate unless ``covariate_cols`` says otherwise.  Rows
    in errors are numbered from 1, counting data rows only.
    """
    with _open_text(source) as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError("empty file: header row missing") from None
        rows = [r for r in reader if any(cell.strip() for cell in r)]

    K, Q = design.K, design.Q
    level_cols = [f"f{k + 1}" for k in range(K)]
    use_levels = arm_col not in header and all(c in header for c in level_cols)
    for col in (stratum_col, outcome_col) + (() if use_levels else (arm_col,)):
        if col not in header:
            raise DataError(f"missing required column {col!r}", column=col)
    taken = {stratum_col, outcome_col, arm_col} | (set(level_cols) if use_levels else set())
    if covariate_cols is None:
        covariate_cols = [h for h in header if h not in taken]
    for col in covariate_cols:
        if col not in header:
            raise DataError(f"missing covariate column {col!r}", column=col)
    pos = {h: i for i, h in enumerate(header)}

    strata, arms, ys, xs = [], [], [], []
    for r, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise DataError(f"expected {len(header)} fields, found {len(row)}", row=r)
        sid = row[pos[stratum_col]].strip()
        if not sid:
            raise DataError("missing stratum label", row=r, column=stratum_col)
        if use_levels:
            lv = []
            for c in level_cols:
                v = row[pos[c]].strip()
                if v not in ("1", "+1", "-1", "1.0", "-1.0", "+1.0"):
                    raise DataError(f"unknown factor level {v!r}", row=r, column=c)
                lv.append(1 if float(v) > 0 else -1)
            arm = design.arm_of_levels(lv)
        else:
            text = row[pos[arm_col]].strip()
            try:
                label = int(text)
            except ValueError:
                raise DataError(f"unknown arm label {text!r}", row=r, column=arm_col) from None
            if not 1 <= label <= Q:
                raise DataError(f"unknown arm label {text!r} (expected 1..{Q})", row=r, column=arm_col)
            arm = label - 1
        text = row[pos[outcome_col]].strip()
        if text == "" or text.upper() in ("NA", "NAN"):
            raise DataError("missing outcome", row=r, column=outcome_col)
        ys.append(_parse_float(text, r, outcome_col))
        xs.append([_parse_float(row[pos[c]].strip(), r, c) for c in covariate_cols])
        strata.append(sid)
        arms.append(arm)

    if not rows:
        raise DataError("no data rows")
    X = np.array(xs, dtype=float).reshape(len(rows), len(covariate_cols))
    return ObservedDataset.from_labels(design, strata, np.array(arms), np.array(ys), X, list(covariate_cols))


def write_csv(data, dest):
    """Write ``data`` in the layout :func:`ingest_csv` reads (arms as 1..Q)."""
    close = False
    if isinstance(dest, str):
        dest = open(dest, "w", newline="", encoding="utf-8")
        close = True
    try:
        w = csv.writer(dest, lineterminator="\n")
        w.writerow(list(REQUIRED_COLUMNS) + list(data.covariate_names))
        for i in range(data.n):
            w.writerow([data.stratum_ids[data.stratum[i]], int(data.arm[i]) + 1, repr(float(data.y[i]))]
                       + [repr(float(v)) for v in data.X[i]])
    finally:
        if close:
            dest.close()
