"""
Variational autoencoder whose decoder emits a full-covariance Gaussian mixture
in Cholesky-of-precision form (a "ChMDN" head). Trained on the negative ELBO:
KL(q(z|x) || N(0, I)) minus the mixture log-likelihood of the sample.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from ..config import TrainConfig
from ..errors import DimensionError, InsufficientDataError
from ..logs import get_logger
from ..mathcore import DIAG_FLOOR, LOG_2PI, CholeskyGaussian, make_rng
from ..nn.mlp import Mlp, MlpSpec
from ..nn.params import model_from_dict, model_to_dict
from ..nn.train import run_adam, seeded_init, split_indices
from .gmm import Gmm, gmm_log_likelihood

logger = get_logger(__name__)


@dataclass
class VaeChmdnSpec:
    dim: int
    latent_dim: int = 4
    components: int = 8
    hidden: list[int] = field(default_factory=lambda: [128, 128])
    activation: str = "silu"

    def __post_init__(self):
        if self.dim < 1 or self.latent_dim < 1 or self.components < 1:
            raise ValueError("dim, latent_dim and components must be >= 1")

    @property
    def tri_size(self) -> int:
        return self.dim * (self.dim + 1) // 2

    @property
    def decoder_width(self) -> int:
        return self.components * (1 + self.dim + self.tri_size)

    def encoder_spec(self) -> MlpSpec:
        return MlpSpec([self.dim, *self.hidden, 2 * self.latent_dim], activation=self.activation)

    def decoder_spec(self) -> MlpSpec:
        return MlpSpec([self.latent_dim, *self.hidden, self.decoder_width], activation=self.activation)

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "latent_dim": self.latent_dim,
            "components": self.components,
            "hidden": list(self.hidden),
            "activation": self.activation,
        }


def standard_normal_kl(mu: torch.Tensor, log_sigma: torch.Tensor) -> torch.Tensor:
    """KL(N(mu, diag sigma^2) || N(0, I)) per row."""
    return 0.5 * torch.sum(torch.exp(2.0 * log_sigma) + mu * mu - 2.0 * log_sigma - 1.0, dim=-1)


def mixture_nll(
    log_w: torch.Tensor, means: torch.Tensor, chol: torch.Tensor, x: torch.Tensor
) -> torch.Tensor:
    """
    -log sum_g pi_g N(x; mu_g, (U_g^T U_g)^-1) per row. log_w is (B, G),
    means (B, G, n), chol (B, G, n, n) upper triangular, x (B, n).
    """
    n = x.shape[-1]
    diff = (x.unsqueeze(1) - means).unsqueeze(-1)
    z = torch.matmul(chol, diff).squeeze(-1)
    quad = torch.sum(z * z, dim=-1)
    log_det = torch.sum(torch.log(torch.diagonal(chol, dim1=-2, dim2=-1)), dim=-1)
    comp = -0.5 * n * LOG_2PI - 0.5 * quad + log_det
    return -torch.logsumexp(log_w + comp, dim=-1)


class VaeChmdn(torch.nn.Module):
    def __init__(self, spec: VaeChmdnSpec):
        super().__init__()
        self.spec = spec
        self.encoder = Mlp(spec.encoder_spec())
        self.decoder = Mlp(spec.decoder_spec())
        rows, cols = torch.triu_indices(spec.dim, spec.dim)
        self.register_buffer("tri_rows", rows, persistent=False)
        self.register_buffer("tri_cols", cols, persistent=False)
        self.register_buffer("tri_diag", rows == cols, persistent=False)

    def encode(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        out = self.encoder(x)
        mu, log_sigma = out.chunk(2, dim=-1)
        return mu, log_sigma

    def decode(self, z: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        s = self.spec
        out = self.decoder(z).reshape(*z.shape[:-1], s.components, 1 + s.dim + s.tri_size)
        log_w = torch.log_softmax(out[..., 0], dim=-1)
        means = out[..., 1 : 1 + s.dim]
        packed = out[..., 1 + s.dim :]
        # exp touches the diagonal slots only
        diag = torch.exp(torch.where(self.tri_diag, packed, torch.zeros_like(packed))).clamp_min(DIAG_FLOOR)
        packed = torch.where(self.tri_diag, diag, packed)
        chol = packed.new_zeros(*packed.shape[:-1], s.dim, s.dim)
        chol[..., self.tri_rows, self.tri_cols] = packed
        return log_w, means, chol

    def loss(self, x: torch.Tensor, eps: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Per-row (kl, nll) at the reparameterized latent mu + sigma * eps."""
        mu, log_sigma = self.encode(x)
        z = mu + torch.exp(log_sigma) * eps
        log_w, means, chol = self.decode(z)
        return standard_normal_kl(mu, log_sigma), mixture_nll(log_w, means, chol, x)

    def forward(self, x: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
        kl, nll = self.loss(x, eps)
        return torch.mean(kl + nll)


def build_vae_chmdn(spec: VaeChmdnSpec, seed: int) -> VaeChmdn:
    with seeded_init(seed):
        return VaeChmdn(spec)


def generate_gmm(model: VaeChmdn, rng: np.random.Generator) -> Gmm:
    """Decode the mixture at one fresh latent draw z ~ N(0, I)."""
    z = torch.as_tensor(rng.standard_normal(model.spec.latent_dim), dtype=torch.float64)
    with torch.no_grad():
        log_w, means, chol = model.decode(z)
    chol_np = np.triu(chol.numpy())
    comps = [CholeskyGaussian(mean=means[g].numpy(), chol_factor=chol_np[g]) for g in range(model.spec.components)]
    return Gmm.from_log_weights(log_w.numpy(), comps)


@dataclass
class VaeChmdnFit:
    model: VaeChmdn
    history: list[float]
    train_nll: float
    test_nll: float
    test_indices: np.ndarray


def vae_chmdn_train(spec: VaeChmdnSpec, data: np.ndarray, cfg: TrainConfig) -> VaeChmdnFit:
    """
    Minimise KL + mixture NLL by minibatch Adam. data must already be scaled
    to roughly unit range. The reported NLLs are per sample, under the
    mixture decoded at a fixed latent draw (the one used for generation).
    """
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if data.shape[1] != spec.dim:
        raise DimensionError(f"data has {data.shape[1]} columns, spec expects {spec.dim}")
    if data.shape[0] < 2:
        raise InsufficientDataError("vae_chmdn_train needs at least two samples")
    rng = make_rng(cfg.seed, stream=21)
    train_idx, test_idx = split_indices(data.shape[0], cfg.test_fraction, rng)
    model = build_vae_chmdn(spec, cfg.seed)
    x_all = torch.as_tensor(data, dtype=torch.float64)
    x_tr = x_all[train_idx]

    def batch_loss(idx: np.ndarray, brng: np.random.Generator) -> torch.Tensor:
        eps = torch.as_tensor(brng.standard_normal((len(idx), spec.latent_dim)), dtype=torch.float64)
        return model(x_tr[idx], eps)

    history = run_adam(list(model.parameters()), batch_loss, len(train_idx), cfg, rng, tag="vae-chmdn")
    gmm = generate_gmm(model, make_rng(cfg.seed, stream=22))
    train_nll = -float(np.mean(gmm_log_likelihood(gmm, data[train_idx])))
    test_nll = -float(np.mean(gmm_log_likelihood(gmm, data[test_idx])))
    logger.info(
        f"VAE-ChMDN (n={spec.dim}, G={spec.components}): train NLL {train_nll:.4f}, "
        f"held-out NLL {test_nll:.4f} ({test_nll / spec.dim:.4f} per dim)"
    )
    if not math.isfinite(test_nll):
        logger.warning("held-out NLL is not finite; decoded mixture misses part of the data")
    return VaeChmdnFit(model=model, history=history, train_nll=train_nll, test_nll=test_nll, test_indices=test_idx)


def vae_chmdn_to_dict(model: VaeChmdn) -> dict:
    return {
        "spec": model.spec.to_dict(),
        "encoder": model_to_dict(model.encoder),
        "decoder": model_to_dict(model.decoder),
    }


def vae_chmdn_from_dict(data: dict) -> VaeChmdn:
    model = VaeChmdn(VaeChmdnSpec(**data["spec"]))
    model.encoder = model_from_dict(data["encoder"])  # type: ignore[assignment]
    model.decoder = model_from_dict(data["decoder"])  # type: ignore[assignment]
    return model
