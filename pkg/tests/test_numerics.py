import math

import numpy as np
import pytest
from scipy import stats

from stratfact.errors import DomainError, SingularMatrixError
from stratfact.numerics import (chi2_cdf, chi2_quantile, cholesky, hash64, inverse_spd, is_psd,
                                logdet_spd, normal_cdf, normal_quantile, replication_seed,
                                sample_mvn, solve_spd, stratum_seed)


def test_solve_identity():
    b = np.array([1.0, -2.0, 3.5])
    np.testing.assert_array_equal(solve_spd(np.eye(3), b), b)


def test_solve_two_by_two():
    np.testing.assert_allclose(solve_spd([[4, 2], [2, 3]], [2, 3]), [0, 1], atol=1e-14)


def test_rank_one_reports_second_pivot():
    with pytest.raises(SingularMatrixError) as info:
        solve_spd([[1, 1], [1, 1]], [1, 1])
    assert info.value.pivot == 2
    assert isinstance(info.value, np.linalg.LinAlgError)


def test_zero_matrix_is_singular_at_first_pivot():
    with pytest.raises(SingularMatrixError) as info:
        cholesky(np.zeros((3, 3)))
    assert info.value.pivot == 1


@pytest.mark.parametrize("d", [1, 2, 5, 12, 20])
def test_solve_round_trip(d):
    rng = np.random.default_rng(d)
    A = rng.normal(size=(d, d))
    A = A @ A.T + d * np.eye(d)
    B = rng.normal(size=(d, 3))
    X = solve_spd(A, B)
    assert np.max(np.abs(A @ X - B)) <= 1e-10 * (1 + np.max(np.abs(B)))
    np.testing.assert_allclose(inverse_spd(A) @ A, np.eye(d), atol=1e-10)
    assert logdet_spd(A) == pytest.approx(np.linalg.slogdet(A)[1], rel=1e-12)


def test_semidefinite_cholesky_accepts_zero_pivot():
    L = cholesky(np.zeros((2, 2)), semidefinite=True)
    np.testing.assert_array_equal(L, 0)
    assert is_psd(np.diag([1.0, 0.0])) and not is_psd(np.diag([1.0, -1.0]))


@pytest.mark.parametrize("df,prob,expected", [(2, 0.95, 5.99146), (1, 0.95, 3.84146), (3, 0.95, 7.81473)])
def test_chi2_quantile_reference_values(df, prob, expected):
    assert chi2_quantile(df, prob) == pytest.approx(expected, abs=1e-5)


def test_chi2_one_df_is_squared_normal():
    assert chi2_quantile(1, 0.95) == pytest.approx(normal_quantile(0.975) ** 2, abs=1e-10)


@pytest.mark.parametrize("df", [1, 2, 3, 4, 7, 15, 31, 63, 127])
def test_chi2_quantile_against_scipy(df):
    for p in (1e-6, 0.001, 0.05, 0.3, 0.5, 0.9, 0.95, 0.999, 1 - 1e-9):
        assert chi2_quantile(df, p) == pytest.approx(stats.chi2.ppf(p, df), abs=1e-8, rel=1e-10)


def test_chi2_quantile_increasing_and_round_trip():
    grid = np.round(np.arange(0.01, 1.0, 0.01), 2)
    for df in (1, 2, 3, 7):
        values = [chi2_quantile(df, p) for p in grid]
        assert all(b > a for a, b in zip(values, values[1:]))
        for p, x in zip(grid, values):
            assert abs(chi2_cdf(x, df) - p) <= 1e-7


def test_normal_quantile_values():
    assert normal_quantile(0.5) == 0.0
    assert normal_quantile(0.975) == pytest.approx(1.959964, abs=1e-6)
    assert normal_quantile(0.025) == pytest.approx(-1.959964, abs=1e-6)
    for p in (1e-12, 1e-5, 0.02425, 0.3, 0.97575, 1 - 1e-10):
        assert normal_quantile(p) == pytest.approx(stats.norm.ppf(p), abs=1e-8)


def test_normal_round_trip():
    for p in np.round(np.arange(0.01, 1.0, 0.01), 2):
        assert abs(normal_cdf(normal_quantile(p)) - p) <= 1e-7


@pytest.mark.parametrize("bad", [0.0, 1.0, -0.1, 1.5, float("nan")])
def test_quantile_domain(bad):
    with pytest.raises(DomainError):
        normal_quantile(bad)
    with pytest.raises(DomainError):
        chi2_quantile(2, bad)


def test_chi2_df_domain():
    with pytest.raises(DomainError):
        chi2_quantile(0, 0.5)


def test_mvn_zero_covariance():
    out = sample_mvn([1.0, -2.0], np.zeros((2, 2)), 5, seed=3)
    np.testing.assert_array_equal(out, np.tile([1.0, -2.0], (5, 1)))


def test_mvn_moments_large_sample():
    n = 10 ** 6
    x = sample_mvn([0.0], [[1.0]], n, seed=123)[:, 0]
    assert abs(x.mean()) <= 4 / math.sqrt(n)
    assert abs(x.var() - 1.0) <= 0.01


def test_mvn_determinism_and_covariance():
    cov = [[1.0, 0.5], [0.5, 2.0]]
    a = sample_mvn([0, 0], cov, 200_000, seed=5)
    assert np.array_equal(a, sample_mvn([0, 0], cov, 200_000, seed=5))
    np.testing.assert_allclose(np.cov(a.T), cov, atol=0.02)


def test_mvn_rejects_indefinite():
    with pytest.raises(SingularMatrixError):
        sample_mvn([0, 0], [[1, 2], [2, 1]], 3, seed=1)


def test_seed_derivation_is_stable():
    assert hash64(1, 2) == hash64(1, 2) != hash64(2, 1)
    assert replication_seed(7, 3) == hash64(7, 3)
    assert stratum_seed(5, "a") == 5 ^ hash64("a")
    assert 0 <= hash64("x") < 2 ** 64
