"""
Numerical kernels shared by every other module.

Gaussians are stored as a mean plus the upper-triangular Cholesky factor U of
the precision matrix (precision = U^T U). Everything is solved by triangular
substitution, no matrix is ever inverted explicitly.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist, pdist
from scipy.special import erfc, gammaincc, gammaln, ndtri

from .errors import DimensionError

DIAG_FLOOR = 1e-4
LOG_2PI = math.log(2.0 * math.pi)


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """
    The seeded randomness contract: same (seed, stream) gives the same
    sequence everywhere, distinct streams are independent.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(stream)])))


@dataclass(frozen=True)
class SeededRng:
    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        return make_rng(self.seed, self.stream)

    def child(self, stream: int) -> "SeededRng":
        return SeededRng(self.seed, self.stream * 1_000_003 + stream + 1)


def child_seed(rng: np.random.Generator) -> int:
    """Draw a 63-bit seed for libraries that want an int (torch, sklearn)."""
    return int(rng.integers(0, 2**63 - 1))


@dataclass
class CholeskyGaussian:
    mean: np.ndarray
    chol_factor: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        u = np.array(self.chol_factor, dtype=np.float64, copy=True)
        n = mean.shape[0]
        if u.shape != (n, n):
            raise DimensionError(f"chol_factor shape {u.shape} does not match mean length {n}")
        if np.any(np.tril(u, k=-1) != 0.0):
            raise ValueError("chol_factor must be upper triangular")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(mean))):
            raise ValueError("CholeskyGaussian entries must be finite")
        idx = np.diag_indices(n)
        u[idx] = np.maximum(u[idx], DIAG_FLOOR)
        self.mean = mean
        self.chol_factor = u

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @classmethod
    def from_covariance(cls, mean: np.ndarray, cov: np.ndarray) -> "CholeskyGaussian":
        """
        Build U with U^T U = cov^-1. With R the index reversal and
        R cov R = L L^T, U = R L^-1 R is upper triangular.
        """
        cov = np.asarray(cov, dtype=np.float64)
        n = cov.shape[0]
        flipped = cov[::-1, ::-1]
        lower = linalg.cholesky(flipped, lower=True)
        lower_inv = linalg.solve_triangular(lower, np.eye(n), lower=True)
        u = lower_inv[::-1, ::-1]
        return cls(mean=mean, chol_factor=np.triu(u))

    def precision(self) -> np.ndarray:
        return self.chol_factor.T @ self.chol_factor

    def covariance(self) -> np.ndarray:
        """(U^T U)^-1 = U^-1 U^-T, through two triangular solves."""
        u_inv = linalg.solve_triangular(self.chol_factor, np.eye(self.dim), lower=False)
        return u_inv @ u_inv.T

    def log_det_chol(self) -> float:
        return float(np.sum(np.log(np.diag(self.chol_factor))))


@dataclass(frozen=True)
class BlockSplit:
    """Size m of the leading block x1; x2 is the trailing n - m entries."""

    m: int

    def check(self, n: int) -> None:
        if not 0 < self.m < n:
            raise DimensionError(f"block split m={self.m} out of range for n={n}")


def _check_vector(x: np.ndarray, n: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != n:
        raise DimensionError(f"{what} has length {x.shape[-1]}, expected {n}")
    return x


def log_density(g: CholeskyGaussian, x: np.ndarray) -> float | np.ndarray:
    """
    Normalized log density. Accepts one vector or a batch of row vectors.
    """
    x = _check_vector(x, g.dim, "x")
    z = (x - g.mean) @ g.chol_factor.T
    quad = np.sum(z * z, axis=-1)
    out = -0.5 * g.dim * LOG_2PI - 0.5 * quad + g.log_det_chol()
    return float(out) if np.ndim(out) == 0 else out


def sample(g: CholeskyGaussian, rng: np.random.Generator, eps: np.ndarray | None = None) -> np.ndarray:
    if eps is None:
        eps = rng.standard_normal(g.dim)
    return g.mean + linalg.solve_triangular(g.chol_factor, eps, lower=False)


def sample_n(g: CholeskyGaussian, rng: np.random.Generator, count: int) -> np.ndarray:
    eps = rng.standard_normal((g.dim, count))
    return g.mean + linalg.solve_triangular(g.chol_factor, eps, lower=False).T


def marginal_block(g: CholeskyGaussian, split: BlockSplit) -> CholeskyGaussian:
    """Distribution of the trailing block x2."""
    split.check(g.dim)
    m = split.m
    return CholeskyGaussian(mean=g.mean[m:], chol_factor=g.chol_factor[m:, m:])


def conditional_block(g: CholeskyGaussian, split: BlockSplit, x2_star: np.ndarray) -> CholeskyGaussian:
    """Distribution of the leading block x1 given x2 = x2_star."""
    split.check(g.dim)
    m = split.m
    x2_star = _check_vector(x2_star, g.dim - m, "x2_star")
    u11 = g.chol_factor[:m, :m]
    u12 = g.chol_factor[:m, m:]
    shift = linalg.solve_triangular(u11, u12 @ (x2_star - g.mean[m:]), lower=False)
    return CholeskyGaussian(mean=g.mean[:m] - shift, chol_factor=u11)


def mahalanobis_sq(marginal: CholeskyGaussian, w_star: np.ndarray) -> float:
    w_star = _check_vector(w_star, marginal.dim, "w_star")
    z = marginal.chol_factor @ (w_star - marginal.mean)
    return float(z @ z)


def _chi2_pdf(q: float, d: int) -> float:
    k = 0.5 * d
    return math.exp((k - 1.0) * math.log(q) - 0.5 * q - k * math.log(2.0) - gammaln(k))


def chi2_quantile(d: int, alpha: float) -> float:
    """
    Upper-tail quantile q with P(X > q) = alpha for X ~ chi2_d.
    Newton on the regularized upper incomplete gamma, Wilson-Hilferty start.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if d < 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {d}")
    z = ndtri(1.0 - alpha)
    c = 2.0 / (9.0 * d)
    q = d * (1.0 - c + z * math.sqrt(c)) ** 3
    if q <= 0.0:
        q = 1e-3 * d
    for _ in range(100):
        f = gammaincc(0.5 * d, 0.5 * q) - alpha
        step = f / _chi2_pdf(q, d)
        # halve until the iterate stays in the domain
        new_q = q + step
        while new_q <= 0.0:
            step *= 0.5
            new_q = q + step
        if abs(new_q - q) <= 1e-14 * max(1.0, q):
            return float(new_q)
        q = new_q
    return float(q)


def gaussian_q(x: float | np.ndarray) -> float | np.ndarray:
    return 0.5 * erfc(np.asarray(x, dtype=np.float64) / math.sqrt(2.0))


def gaussian_q_inv(eps: float) -> float:
    """x with Q(x) = eps: Cephes rational approximation plus one Newton polish."""
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    x = -float(ndtri(eps))
    pdf = math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return x + (float(gaussian_q(x)) - eps) / pdf


def median_bandwidth(x: np.ndarray, y: np.ndarray) -> float:
    """Median pairwise distance over the pooled samples."""
    pooled = np.vstack([np.atleast_2d(x), np.atleast_2d(y)])
    dists = pdist(pooled)
    med = float(np.median(dists)) if dists.size else 0.0
    return med if med > 0.0 else 1.0


def mmd_sq(x: np.ndarray, y: np.ndarray, bandwidth: float | None = None) -> float:
    """Biased empirical MMD^2 with a Gaussian kernel."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.shape[0] == 0 or y.shape[0] == 0:
        raise ValueError("mmd_sq needs non-empty sample sets")
    if x.shape[1] != y.shape[1]:
        raise DimensionError(f"sample dims differ: {x.shape[1]} vs {y.shape[1]}")
    if bandwidth is None:
        bandwidth = median_bandwidth(x, y)
    if bandwidth <= 0:
        raise ValueError("bandwidth must be > 0")
    scale = 2.0 * bandwidth * bandwidth
    kxx = np.exp(-cdist(x, x, "sqeuclidean") / scale).mean()
    kyy = np.exp(-cdist(y, y, "sqeuclidean") / scale).mean()
    kxy = np.exp(-cdist(x, y, "sqeuclidean") / scale).mean()
    return float(kxx + kyy - 2.0 * kxy)
