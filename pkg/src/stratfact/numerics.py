"""Small dense numerical kernel.

Cholesky-based SPD solves, normal and chi-square quantiles, seeded
multivariate normal draws and the seed-derivation helpers used for
reproducible substreams.

Random numbers come from numpy's PCG64 bit generator; normal variates are
drawn with ``Generator.standard_normal`` (ziggurat).
"""

import hashlib
import math
import struct

import numpy as np

from .errors import DomainError, SingularMatrixError

PIVOT_RTOL = 1e-12


# -- seeding -----------------------------------------------------------------

def hash64(*parts):
    """Stable 64-bit hash of a tuple of ints/strings (blake2b)."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        if isinstance(part, (int, np.integer)):
            h.update(b"i" + struct.pack("<Q", int(part) & 0xFFFFFFFFFFFFFFFF))
        else:
            data = str(part).encode("utf-8")
            h.update(b"s" + struct.pack("<Q", len(data)) + data)
    return struct.unpack("<Q", h.digest())[0]


def stratum_seed(seed, stratum_id):
    """Per-stratum substream seed: ``seed XOR hash64(stratum_id)``."""
    return (int(seed) ^ hash64(str(stratum_id))) & 0xFFFFFFFFFFFFFFFF


def replication_seed(master_seed, rep):
    """Counter-based per-replication seed ``hash64(master_seed, rep)``."""
    return hash64(int(master_seed), int(rep))


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


# -- SPD algebra -------------------------------------------------------------

def symmetrize(a):
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + a.T)


def cholesky(a, semidefinite=False, context=None):
    """Lower Cholesky factor of a symmetric matrix.

    A pivot at or below ``1e-12 * max(diag)`` is singular.  With
    ``semidefinite=True`` such pivots are accepted as exact zeros (the rest
    of that column must then vanish too), which factors PSD matrices.
    """
    a = symmetrize(a)
    d = a.shape[0]
    if a.shape != (d, d):
        raise DomainError(f"expected a square matrix, got shape {a.shape}")
    scale = max(float(np.max(np.diag(a))), 0.0) if d else 0.0
    tol = PIVOT_RTOL * scale
    L = np.zeros_like(a)
    for j in range(d):
        pivot = a[j, j] - L[j, :j] @ L[j, :j]
        if pivot <= tol:
            if not semidefinite:
                raise SingularMatrixError(j + 1, context)
            col = a[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]
            if pivot < -1e-10 * scale or np.any(np.abs(col) > 1e-8 * scale):
                raise SingularMatrixError(j + 1, context, "matrix is not positive semidefinite")
            continue
        ljj = math.sqrt(pivot)
        L[j, j] = ljj
        L[j + 1:, j] = (a[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / ljj
    return L


def _forward(L, b):
    y = np.array(b, dtype=float, copy=True)
    for i in range(L.shape[0]):
        y[i] = (y[i] - L[i, :i] @ y[:i]) / L[i, i]
    return y


def _backward(L, y):
    x = np.array(y, dtype=float, copy=True)
    for i in range(L.shape[0] - 1, -1, -1):
        x[i] = (x[i] - L[i + 1:, i] @ x[i + 1:]) / L[i, i]
    return x


def solve_spd(a, b, context=None):
    """Solve ``a @ x = b`` for symmetric positive definite ``a``.

    ``b`` may be a vector or a ``d x k`` matrix.  Raises
    :class:`SingularMatrixError` carrying the 1-based failing pivot.
    """
    L = cholesky(a, context=context)
    b = np.asarray(b, dtype=float)
    if b.shape[0] != L.shape[0]:
        raise DomainError(f"right-hand side has {b.shape[0]} rows, matrix has order {L.shape[0]}")
    return _backward(L, _forward(L, b))


def inverse_spd(a, context=None):
    a = np.asarray(a, dtype=float)
    return symmetrize(solve_spd(a, np.eye(a.shape[0]), context=context))


def logdet_spd(a, context=None):
    L = cholesky(a, context=context)
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def is_psd(a, tol=1e-10):
    """PSD check via eigenvalues, with tolerance relative to the spectral scale."""
    a = symmetrize(a)
    if a.size == 0:
        return True
    w = np.linalg.eigvalsh(a)
    return bool(w[0] >= -tol * max(1.0, float(np.max(np.abs(w)))))


# -- distributions -----------------------------------------------------------

def _check_prob(prob):
    if not (0.0 < prob < 1.0) or math.isnan(prob):
        raise DomainError(f"probability must lie in (0, 1), got {prob!r}")


def normal_cdf(x):
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def normal_pdf(x):
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


# Acklam's rational approximation, relative error ~1.15e-9 before polishing.
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)


def normal_quantile(prob):
    """Standard normal quantile, polished with one Halley step against erfc."""
    prob = float(prob)
    _check_prob(prob)
    plow = 0.02425
    if prob < plow:
        q = math.sqrt(-2.0 * math.log(prob))
        x = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    elif prob <= 1.0 - plow:
        q = prob - 0.5
        r = q * q
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
            (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
    else:
        q = math.sqrt(-2.0 * math.log1p(-prob))
        x = -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
            ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    # upper-tail residual keeps precision when prob is close to 1
    if prob > 0.5:
        err = (1.0 - prob) - 0.5 * math.erfc(x / math.sqrt(2.0))
    else:
        err = normal_cdf(x) - prob
    u = err * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def _gamma_pq(a, x):
    """Regularized incomplete gamma pair (P(a, x), Q(a, x)).

    Series expansion for ``x < a + 1``, Lentz continued fraction for the
    upper tail otherwise, so the smaller of the two is always computed
    directly.
    """
    if a <= 0:
        raise DomainError(f"shape must be positive, got {a}")
    if x <= 0:
        return 0.0, 1.0
    log_prefix = a * math.log(x) - x - math.lgamma(a)
    if x < a + 1.0:
        term = 1.0 / a
        total = term
        ap = a
        for _ in range(10000):
            ap += 1.0
            term *= x / ap
            total += term
            if abs(term) < abs(total) * 1e-17:
                break
        lower = min(1.0, total * math.exp(log_prefix))
        return lower, 1.0 - lower
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    upper = min(1.0, math.exp(log_prefix) * h)
    return 1.0 - upper, upper


def regularized_gamma_p(a, x):
    """Regularized lower incomplete gamma function P(a, x)."""
    return _gamma_pq(a, x)[0]


def regularized_gamma_q(a, x):
    """Regularized upper incomplete gamma function Q(a, x) = 1 - P(a, x)."""
    return _gamma_pq(a, x)[1]


def chi2_cdf(x, df):
    if x <= 0:
        return 0.0
    return regularized_gamma_p(0.5 * df, 0.5 * x)


def chi2_sf(x, df):
    if x <= 0:
        return 1.0
    return regularized_gamma_q(0.5 * df, 0.5 * x)


def chi2_pdf(x, df):
    if x <= 0:
        return 0.0
    k = 0.5 * df
    return math.exp((k - 1.0) * math.log(x) - 0.5 * x - k * math.log(2.0) - math.lgamma(k))


def chi2_quantile(df, prob):
    """Chi-square quantile by bracketing bisection plus Newton polish.

    Above the median the upper tail is inverted instead, which keeps full
    relative accuracy for probabilities close to one.
    """
    prob = float(prob)
    _check_prob(prob)
    if int(df) != df or df < 1:
        raise DomainError(f"degrees of freedom must be a positive integer, got {df!r}")
    df = int(df)
    if prob <= 0.5:
        target = prob
        gap = lambda t: chi2_cdf(t, df) - target      # noqa: E731  increasing
    else:
        target = 1.0 - prob
        gap = lambda t: target - chi2_sf(t, df)       # noqa: E731  increasing
    lo, hi = 0.0, max(1.0, float(df))
    while gap(hi) < 0:
        lo, hi = hi, 2.0 * hi
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if gap(mid) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13 * max(1.0, hi):
            break
    x = 0.5 * (lo + hi)
    dens = chi2_pdf(x, df)
    if dens > 0:
        step = gap(x) / dens
        if abs(step) < (hi - lo) + 1e-10:
            x -= step
    return x


# -- sampling ----------------------------------------------------------------

def sample_mvn(mean, cov, n, seed):
    """``n`` i.i.d. rows from N(mean, cov) as ``Z @ L.T + mean``.

    ``L`` is the (semidefinite) Cholesky factor of ``cov``; ``Z`` holds
    standard normals from PCG64 seeded with ``seed``.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    d = mean.shape[0]
    if cov.shape != (d, d):
        raise DomainError(f"covariance shape {cov.shape} does not match mean length {d}")
    if d and np.all(cov == 0):
        L = np.zeros((d, d))
    else:
        L = cholesky(cov, semidefinite=True, context="covariance")
    z = make_rng(seed).standard_normal((int(n), d))
    return z @ L.T + mean
