"""Full-covariance Gaussian mixtures in Cholesky-of-precision form."""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp
from sklearn.exceptions import ConvergenceWarning
from sklearn.mixture import GaussianMixture

from ..errors import DimensionError, InsufficientDataError, NumericalError
from ..logs import get_logger
from ..mathcore import CholeskyGaussian, child_seed, log_density, make_rng, sample
from ..util import decode_floats, encode_floats

logger = get_logger(__name__)

WEIGHT_TOL = 1e-12
EM_MAX_ITER = 200
EM_TOL = 1e-8
EM_REG = 1e-6
EM_RESTARTS = 5


@dataclass
class Gmm:
    weights: np.ndarray
    components: list[CholeskyGaussian]

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if w.shape[0] != len(self.components) or w.shape[0] == 0:
            raise DimensionError(f"{w.shape[0]} weights for {len(self.components)} components")
        if np.any(w < 0.0) or abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"mixture weights must lie on the simplex, sum is {w.sum()!r}")
        dims = {c.dim for c in self.components}
        if len(dims) != 1:
            raise DimensionError(f"components disagree on dimension: {sorted(dims)}")
        self.weights = w

    @property
    def dim(self) -> int:
        return self.components[0].dim

    def __len__(self) -> int:
        return len(self.components)

    @classmethod
    def from_log_weights(cls, log_weights: np.ndarray, components: list[CholeskyGaussian]) -> "Gmm":
        lw = np.asarray(log_weights, dtype=np.float64)
        w = np.exp(lw - logsumexp(lw))
        return cls(weights=w / w.sum(), components=components)

    def mean(self) -> np.ndarray:
        return np.einsum("g,gn->n", self.weights, np.stack([c.mean for c in self.components]))

    def to_dict(self) -> dict:
        n = self.dim
        rows, cols = np.triu_indices(n)
        return {
            "components": len(self),
            "dim": n,
            "weights": encode_floats(self.weights),
            "means": encode_floats(np.concatenate([c.mean for c in self.components])),
            "chol_packed": encode_floats(np.concatenate([c.chol_factor[rows, cols] for c in self.components])),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Gmm":
        g, n = int(data["components"]), int(data["dim"])
        weights = decode_floats(data["weights"])
        means = decode_floats(data["means"]).reshape(g, n)
        packed = decode_floats(data["chol_packed"]).reshape(g, n * (n + 1) // 2)
        rows, cols = np.triu_indices(n)
        comps = []
        for j in range(g):
            u = np.zeros((n, n))
            u[rows, cols] = packed[j]
            comps.append(CholeskyGaussian(mean=means[j], chol_factor=u))
        return cls(weights=weights, components=comps)


def component_log_densities(gmm: Gmm, x: np.ndarray) -> np.ndarray:
    """(..., G) array of log pi_g + log p_g(x)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != gmm.dim:
        raise DimensionError(f"x has length {x.shape[-1]}, mixture dimension is {gmm.dim}")
    with np.errstate(divide="ignore"):
        log_w = np.log(gmm.weights)
    return np.stack([log_density(c, x) for c in gmm.components], axis=-1) + log_w


def gmm_log_likelihood(gmm: Gmm, x: np.ndarray) -> float | np.ndarray:
    """Log density of one vector or each row of a batch."""
    out = logsumexp(component_log_densities(gmm, x), axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def draw_component(weights: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF categorical draw."""
    cdf = np.cumsum(weights)
    idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(idx, len(weights) - 1)


def gmm_sample(gmm: Gmm, rng: np.random.Generator) -> np.ndarray:
    return sample(gmm.components[draw_component(gmm.weights, rng)], rng)


def gmm_sample_n(gmm: Gmm, rng: np.random.Generator, count: int) -> np.ndarray:
    return np.stack([gmm_sample(gmm, rng) for _ in range(count)]) if count else np.zeros((0, gmm.dim))


@dataclass
class EmResult:
    gmm: Gmm
    log_likelihood: list[float] = field(default_factory=list)
    converged: bool = False
    restarts: int = 0


def _run_em(data: np.ndarray, components: int, seed: int) -> tuple[GaussianMixture, list[float], bool]:
    model = GaussianMixture(
        n_components=components,
        covariance_type="full",
        reg_covar=EM_REG,
        init_params="k-means++",
        max_iter=1,
        warm_start=True,
        random_state=seed,
    )
    history: list[float] = []
    converged = False
    with warnings.catch_warnings():
        # one EM sweep per fit call, so every call "fails to converge"
        warnings.simplefilter("ignore", ConvergenceWarning)
        for _ in range(EM_MAX_ITER):
            model.fit(data)
            history.append(float(model.score(data)))
            if len(history) > 1:
                prev = history[-2]
                if abs(history[-1] - prev) <= EM_TOL * max(abs(prev), 1e-300):
                    converged = True
                    break
    return model, history, converged


def em_fit(data: np.ndarray, components: int, seed: int) -> EmResult:
    """
    Expectation-maximization with k-means++ initialization. Stops after
    200 sweeps or once the mean log-likelihood changes by less than 1e-8
    relative. A component collapsing onto too few points restarts the fit
    from a new seed, at most 5 times.
    """
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    n_samples, n = data.shape
    if n_samples < components * (n + 2):
        raise InsufficientDataError(
            f"em_fit needs at least {components * (n + 2)} samples for G={components}, n={n}; got {n_samples}"
        )
    rng = make_rng(seed, stream=5)
    attempt_seed = int(seed) % (2**32)
    for attempt in range(EM_RESTARTS + 1):
        try:
            model, history, converged = _run_em(data, components, attempt_seed)
            comps = [
                CholeskyGaussian.from_covariance(model.means_[g], model.covariances_[g])
                for g in range(components)
            ]
        except (ValueError, np.linalg.LinAlgError) as e:
            logger.warning(f"EM attempt {attempt} failed ({e}); restarting with a new seed")
            attempt_seed = child_seed(rng) % (2**32)
            continue
        weights = model.weights_ / model.weights_.sum()
        logger.debug(f"EM finished after {len(history)} sweeps, mean log-likelihood {history[-1]:.6f}")
        return EmResult(
            gmm=Gmm(weights=weights, components=comps),
            log_likelihood=history,
            converged=converged,
            restarts=attempt,
        )
    raise NumericalError(f"EM failed to produce non-singular components after {EM_RESTARTS} restarts")
