import numpy as np

from stratfact.dataset import ObservedDataset
from stratfact.design import build_design


def random_dataset(seed, K=2, counts=None, p=2, M=3, per_cell=4, heterogeneous=True):
    """Observed data with random counts (>= per_cell) and a nonlinear outcome."""
    rng = np.random.default_rng(seed)
    design = build_design(K)
    Q = design.Q
    if counts is None:
        counts = per_cell + rng.integers(0, 3, size=(M, Q))
    counts = np.asarray(counts)
    M = counts.shape[0]
    stratum, arm = [], []
    for m in range(M):
        for q in range(Q):
            stratum += [m] * int(counts[m, q])
            arm += [q] * int(counts[m, q])
    stratum, arm = np.array(stratum), np.array(arm)
    n = len(arm)
    X = rng.normal(size=(n, p)) + rng.normal(size=(M, p))[stratum]
    slope = rng.normal(size=(M if heterogeneous else 1, Q, p))
    slope = slope[stratum if heterogeneous else np.zeros(n, dtype=int), arm]
    y = np.einsum("ij,ij->i", X, slope) + (0.3 * np.sin(X[:, 0] * 3) if p else 0.0) + rng.normal(size=n) + arm
    perm = rng.permutation(n)
    return ObservedDataset(design, stratum[perm], arm[perm], y[perm], X[perm], list(range(1, M + 1)))


def with_rows(data, y=None, X=None):
    return ObservedDataset(data.design, data.stratum, data.arm, data.y if y is None else y,
                           data.X if X is None else X, list(data.stratum_ids), list(data.covariate_names))
