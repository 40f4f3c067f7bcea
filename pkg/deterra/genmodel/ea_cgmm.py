"""
Evidence-aware conditional inference on a joint mixture over (x1, x2).

Each component is conditioned on x2 = w*. Components whose x2-marginal
puts w* inside its (1 - alpha) chi-squared ellipsoid are credible and share
the mass uniformly; with no credible component the weights fall back to the
posterior responsibilities of the marginals.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import softmax

from ..errors import DimensionError
from ..mathcore import BlockSplit, CholeskyGaussian, chi2_quantile, conditional_block, marginal_block
from .gmm import Gmm


@dataclass
class EaCgmm:
    """Caches the per-component marginals and the mask threshold of one joint mixture."""

    joint: Gmm
    split: BlockSplit
    alpha: float
    marginals: list[CholeskyGaussian] = field(init=False)
    threshold: float = field(init=False)

    def __post_init__(self):
        self.split.check(self.joint.dim)
        self.marginals = [marginal_block(c, self.split) for c in self.joint.components]
        self.threshold = chi2_quantile(self.cond_dim, self.alpha)
        self._u22 = np.stack([m.chol_factor for m in self.marginals])
        self._mu2 = np.stack([m.mean for m in self.marginals])
        self._logdet22 = np.array([m.log_det_chol() for m in self.marginals])

    @property
    def cond_dim(self) -> int:
        return self.joint.dim - self.split.m

    def _whitened(self, w_star: np.ndarray) -> np.ndarray:
        w_star = np.asarray(w_star, dtype=np.float64)
        if w_star.shape != (self.cond_dim,):
            raise DimensionError(f"w_star has shape {w_star.shape}, expected ({self.cond_dim},)")
        return np.einsum("jab,jb->ja", self._u22, w_star - self._mu2)

    def distances(self, w_star: np.ndarray) -> np.ndarray:
        """Squared Mahalanobis distance of w_star under every component marginal."""
        z = self._whitened(w_star)
        return np.sum(z * z, axis=1)

    def credible_mask(self, w_star: np.ndarray) -> np.ndarray:
        return self.distances(w_star) < self.threshold

    def weights(self, w_star: np.ndarray) -> np.ndarray:
        dist = self.distances(w_star)
        mask = dist < self.threshold
        if mask.any():
            return mask / mask.sum()
        # shared -d/2 log(2 pi) cancels inside the softmax
        return softmax(-0.5 * dist + self._logdet22)

    def infer(self, w_star: np.ndarray) -> Gmm:
        weights = self.weights(w_star)
        conditionals = [conditional_block(c, self.split, w_star) for c in self.joint.components]
        return Gmm(weights=weights, components=conditionals)


def ea_cgmm_infer(joint: Gmm, split: BlockSplit, w_star: np.ndarray, alpha: float) -> Gmm:
    return EaCgmm(joint, split, alpha).infer(w_star)
