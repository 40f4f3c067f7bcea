import contextlib
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np
import torch

from ..config import TrainConfig
from ..errors import InsufficientDataError, NumericalError
from ..logs import get_logger
from ..mathcore import make_rng
from .kan import Kan
from .scaler import Scaler, Standardizer, fit_scaler

logger = get_logger(__name__)


@contextlib.contextmanager
def seeded_init(seed: int) -> Iterator[None]:
    """Run torch parameter initialisation under a fixed seed without touching the global stream."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed % (2**63))
        yield


def split_indices(n: int, test_fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(n)
    n_test = max(1, int(round(n * test_fraction)))
    if n - n_test < 1:
        raise InsufficientDataError(f"{n} samples cannot be split into train and test sets")
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def run_adam(
    params: list[torch.nn.Parameter],
    batch_loss: Callable[[np.ndarray, np.random.Generator], torch.Tensor],
    n: int,
    cfg: TrainConfig,
    rng: np.random.Generator,
    tag: str = "model",
) -> list[float]:
    """
    Minibatch Adam over n samples. batch_loss(idx, rng) returns the mean loss
    of the given rows. Returns the per-epoch mean training loss.
    """
    opt = torch.optim.Adam(params, lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.adam_eps)
    history: list[float] = []
    clipped = 0
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        total, batches = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            loss = batch_loss(idx, rng)
            if not torch.isfinite(loss):
                raise NumericalError(f"{tag}: non-finite loss at epoch {epoch}, batch starting {start}")
            opt.zero_grad()
            loss.backward()
            norm = torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
            if norm > cfg.grad_clip:
                clipped += 1
            opt.step()
            total += float(loss.detach())
            batches += 1
        history.append(total / batches)
        logger.debug(f"{tag} epoch {epoch}: loss {history[-1]:.6g}")
    if clipped:
        logger.warning(f"{tag}: gradient norm clipped at {cfg.grad_clip} in {clipped} steps")
    return history


@dataclass
class RegressorFit:
    model: torch.nn.Module
    x_scaler: Scaler
    y_std: Standardizer
    train_mae: float
    test_mae: float
    train_bias: float
    test_bias: float
    history: list[float] = field(default_factory=list)

    def predict(self, x: np.ndarray) -> np.ndarray:
        xs = torch.as_tensor(self.x_scaler.apply(np.atleast_2d(x)), dtype=torch.float64)
        with torch.no_grad():
            z = self.model(xs).reshape(-1).numpy()
        return self.y_std.invert(z)


def _scaled_errors(model: torch.nn.Module, x: torch.Tensor, y: torch.Tensor) -> tuple[float, float]:
    with torch.no_grad():
        resid = model(x).reshape(-1) - y
    return float(resid.abs().mean()), float(resid.mean())


def train_regressor(
    model: torch.nn.Module,
    x: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
    x_scaler: Scaler | None = None,
) -> RegressorFit:
    """
    Fit a scalar regressor with MSE on standardized targets. Inputs are mapped
    into [-1, 1] first (KAN grids live there). Errors are reported in
    standardized target units.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape[0] != y.shape[0]:
        raise InsufficientDataError(f"{x.shape[0]} inputs for {y.shape[0]} targets")
    rng = make_rng(cfg.seed, stream=11)
    train_idx, test_idx = split_indices(x.shape[0], cfg.test_fraction, rng)

    x_scaler = x_scaler or fit_scaler(x[train_idx])
    y_std = Standardizer.fit(y[train_idx])
    xs = torch.as_tensor(x_scaler.apply(x), dtype=torch.float64)
    ys = torch.as_tensor(y_std.apply(y), dtype=torch.float64)
    x_tr, y_tr = xs[train_idx], ys[train_idx]

    if isinstance(model, Kan):
        model.place_grids(x_tr)

    def batch_loss(idx: np.ndarray, _rng: np.random.Generator) -> torch.Tensor:
        pred = model(x_tr[idx]).reshape(-1)
        return torch.mean((pred - y_tr[idx]) ** 2)

    history = run_adam(list(model.parameters()), batch_loss, len(train_idx), cfg, rng, tag="regressor")
    train_mae, train_bias = _scaled_errors(model, x_tr, y_tr)
    test_mae, test_bias = _scaled_errors(model, xs[test_idx], ys[test_idx])
    if not (math.isfinite(train_mae) and math.isfinite(test_mae)):
        raise NumericalError("regressor produced non-finite predictions")
    logger.info(
        f"Trained {type(model).__name__} regressor: train MAE {train_mae:.4f}, test MAE {test_mae:.4f}"
    )
    return RegressorFit(
        model=model,
        x_scaler=x_scaler,
        y_std=y_std,
        train_mae=train_mae,
        test_mae=test_mae,
        train_bias=train_bias,
        test_bias=test_bias,
        history=history,
    )
