import math

import numpy as np
import pytest
from scipy import integrate, optimize, stats

from deterra.errors import DimensionError
from deterra.mathcore import (
    BlockSplit,
    CholeskyGaussian,
    SeededRng,
    chi2_quantile,
    conditional_block,
    gaussian_q,
    gaussian_q_inv,
    log_density,
    mahalanobis_sq,
    make_rng,
    marginal_block,
    mmd_sq,
    sample_n,
)

U2 = np.array([[1.0, -1.0], [0.0, 1.0]])


def random_gaussian(n: int, rng: np.random.Generator) -> CholeskyGaussian:
    a = rng.standard_normal((n, n))
    cov = a @ a.T / n + 0.5 * np.eye(n)
    return CholeskyGaussian.from_covariance(rng.standard_normal(n), cov)


def test_log_density_at_mean():
    g = CholeskyGaussian(mean=np.zeros(2), chol_factor=U2)
    assert log_density(g, np.zeros(2)) == pytest.approx(-math.log(2 * math.pi), abs=1e-7)


def test_log_density_matches_scipy(rng):
    g = random_gaussian(5, rng)
    x = rng.standard_normal((10, 5))
    ref = stats.multivariate_normal(g.mean, np.linalg.inv(g.precision())).logpdf(x)
    np.testing.assert_allclose(log_density(g, x), ref, rtol=1e-10)


def test_from_covariance_is_upper_and_inverts(rng):
    a = rng.standard_normal((4, 4))
    cov = a @ a.T + np.eye(4)
    g = CholeskyGaussian.from_covariance(np.zeros(4), cov)
    assert np.allclose(np.tril(g.chol_factor, -1), 0.0)
    np.testing.assert_allclose(g.covariance(), cov, rtol=1e-10)


def test_rejects_lower_entries():
    with pytest.raises(ValueError):
        CholeskyGaussian(mean=np.zeros(2), chol_factor=np.array([[1.0, 0.0], [0.5, 1.0]]))


def test_diagonal_floor():
    g = CholeskyGaussian(mean=np.zeros(2), chol_factor=np.diag([1e-9, 1.0]))
    assert g.chol_factor[0, 0] == pytest.approx(1e-4)


def test_sample_moments():
    g = CholeskyGaussian(mean=np.array([1.0, -2.0]), chol_factor=U2)
    x = sample_n(g, make_rng(5), 100_000)
    cov = np.array([[2.0, 1.0], [1.0, 1.0]])
    se = np.sqrt(np.diag(cov) / x.shape[0])
    assert np.all(np.abs(x.mean(axis=0) - g.mean) < 4 * se)
    np.testing.assert_allclose(np.cov(x.T), cov, atol=0.05)


def test_marginal_and_conditional_small_case():
    g = CholeskyGaussian(mean=np.zeros(2), chol_factor=U2)
    marg = marginal_block(g, BlockSplit(1))
    assert marg.covariance()[0, 0] == pytest.approx(1.0)
    cond = conditional_block(g, BlockSplit(1), np.array([1.0]))
    assert cond.mean[0] == pytest.approx(1.0)
    assert cond.covariance()[0, 0] == pytest.approx(1.0)


def test_blocks_match_dense_schur_complement():
    rng = make_rng(11)
    for _ in range(200):
        n = int(rng.integers(2, 21))
        m = int(rng.integers(1, n))
        g = random_gaussian(n, rng)
        sigma = np.linalg.inv(g.precision())
        x2 = rng.standard_normal(n - m)

        marg = marginal_block(g, BlockSplit(m))
        np.testing.assert_allclose(marg.covariance(), sigma[m:, m:], rtol=1e-8, atol=1e-10)

        gain = sigma[:m, m:] @ np.linalg.inv(sigma[m:, m:])
        cond = conditional_block(g, BlockSplit(m), x2)
        np.testing.assert_allclose(cond.mean, g.mean[:m] + gain @ (x2 - g.mean[m:]), rtol=1e-8, atol=1e-10)
        np.testing.assert_allclose(
            cond.covariance(), sigma[:m, :m] - gain @ sigma[m:, :m], rtol=1e-8, atol=1e-10
        )


@pytest.mark.parametrize("m", [0, 2])
def test_split_out_of_range(m):
    g = CholeskyGaussian(mean=np.zeros(2), chol_factor=U2)
    with pytest.raises(DimensionError):
        marginal_block(g, BlockSplit(m))


def test_conditional_rejects_wrong_length():
    g = CholeskyGaussian(mean=np.zeros(3), chol_factor=np.eye(3))
    with pytest.raises(DimensionError):
        conditional_block(g, BlockSplit(1), np.zeros(1))


def test_mahalanobis_matches_dense(rng):
    g = random_gaussian(6, rng)
    w = rng.standard_normal(6)
    d = w - g.mean
    assert mahalanobis_sq(g, w) == pytest.approx(d @ np.linalg.inv(g.covariance()) @ d, rel=1e-10)


def test_chi2_quantile_spot_value():
    assert chi2_quantile(1, 0.03) == pytest.approx(4.7093, abs=5e-4)


@pytest.mark.parametrize("d", [1, 2, 5, 10, 30, 50])
def test_chi2_quantile_matches_tail_integral(d):
    def tail(q):
        return integrate.quad(stats.chi2(d).pdf, q, np.inf, epsrel=1e-12)[0] - 0.03

    ref = optimize.brentq(tail, 1e-6, 20.0 * d + 50.0, xtol=1e-12)
    assert chi2_quantile(d, 0.03) == pytest.approx(ref, rel=1e-6)


@pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1])
def test_chi2_quantile_rejects_alpha(alpha):
    with pytest.raises(ValueError):
        chi2_quantile(3, alpha)


@pytest.mark.parametrize("eps", [10.0**-k for k in range(1, 10)])
def test_gaussian_q_inv_roundtrip(eps):
    assert float(gaussian_q(gaussian_q_inv(eps))) == pytest.approx(eps, rel=1e-9)


def test_mmd_same_distribution_is_small():
    a = make_rng(1).standard_normal((500, 2))
    b = make_rng(2).standard_normal((500, 2))
    assert mmd_sq(a, b) < 0.01


def test_mmd_identical_sets_is_zero(rng):
    a = rng.standard_normal((50, 3))
    assert mmd_sq(a, a) == pytest.approx(0.0, abs=1e-12)


def test_mmd_detects_shift(rng):
    a = rng.standard_normal((300, 2))
    b = rng.standard_normal((300, 2)) + 3.0
    assert mmd_sq(a, b) > 0.1


def test_make_rng_streams_are_independent():
    assert make_rng(7, 1).random() != make_rng(7, 2).random()
    assert make_rng(7, 1).random() == make_rng(7, 1).random()


def test_seeded_rng_children():
    root = SeededRng(5)
    assert root.generator().random() == make_rng(5).random()
    a, b = root.child(0), root.child(1)
    assert a.generator().random() != b.generator().random()
    assert a == root.child(0)


def test_average_log_density_is_negative_entropy():
    g = random_gaussian(3, make_rng(8))
    x = sample_n(g, make_rng(9), 100_000)
    entropy = 0.5 * g.dim * (1.0 + math.log(2 * math.pi)) - g.log_det_chol()
    assert np.mean(log_density(g, x)) == pytest.approx(-entropy, abs=0.05)


@pytest.mark.parametrize("n", [2, 5, 10])
def test_mahalanobis_of_own_samples_follows_chi2(n):
    g = random_gaussian(n, make_rng(n))
    x = sample_n(g, make_rng(100 + n), 20_000)
    d = np.array([mahalanobis_sq(g, row) for row in x])
    q = chi2_quantile(n, 0.03)
    assert np.quantile(d, 0.97) == pytest.approx(q, rel=0.05)
