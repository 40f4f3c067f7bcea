"""Flat parameter vectors, exact gradients, finite-difference checks and model files."""

from dataclasses import dataclass
from typing import Any, Callable

import numpy as np
import torch

from ..errors import ArtifactError, DimensionError
from ..util import decode_floats, encode_floats
from .kan import Kan, KanSpec
from .mlp import Mlp, MlpSpec

MODEL_FILE_VERSION = 1


@dataclass
class ParamVector:
    values: np.ndarray
    shapes: list[tuple[str, tuple[int, ...]]]

    @classmethod
    def of(cls, model: torch.nn.Module) -> "ParamVector":
        vec = torch.nn.utils.parameters_to_vector(model.parameters()).detach().cpu().numpy()
        shapes = [(name, tuple(p.shape)) for name, p in model.named_parameters()]
        return cls(values=vec.astype(np.float64), shapes=shapes)

    def load_into(self, model: torch.nn.Module) -> None:
        expected = [(name, tuple(p.shape)) for name, p in model.named_parameters()]
        if [(n, tuple(s)) for n, s in self.shapes] != expected:
            raise DimensionError("parameter shapes do not match the model")
        torch.nn.utils.vector_to_parameters(
            torch.tensor(self.values, dtype=torch.float64), model.parameters()
        )

    def to_dict(self) -> dict:
        return {
            "shapes": [[name, list(shape)] for name, shape in self.shapes],
            "params": encode_floats(self.values),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ParamVector":
        values = decode_floats(data["params"])
        shapes = [(name, tuple(shape)) for name, shape in data["shapes"]]
        if values.size != sum(int(np.prod(s)) for _, s in shapes):
            raise ArtifactError("parameter payload size does not match the shape registry")
        return cls(values=values, shapes=shapes)


@dataclass
class Gradients:
    loss: float
    params: np.ndarray
    inputs: np.ndarray | None


def backward(
    model: torch.nn.Module,
    loss_fn: Callable[[torch.Tensor], torch.Tensor],
    x: torch.Tensor,
) -> Gradients:
    """Exact gradient of the scalar loss_fn(model(x)) w.r.t. every parameter and the input."""
    x = x.detach().clone().requires_grad_(True)
    params = [p for p in model.parameters() if p.requires_grad]
    loss = loss_fn(model(x))
    grads = torch.autograd.grad(loss, params + [x], allow_unused=True)
    flat = torch.cat(
        [(g if g is not None else torch.zeros_like(p)).reshape(-1) for g, p in zip(grads[:-1], params)]
    )
    g_in = grads[-1]
    return Gradients(
        loss=float(loss.detach()),
        params=flat.detach().numpy(),
        inputs=None if g_in is None else g_in.detach().numpy(),
    )


mlp_backward = backward
kan_backward = backward


def finite_difference_check(
    model: torch.nn.Module,
    objective: Callable[[], torch.Tensor],
    rng: np.random.Generator,
    coords: int = 100,
    step: float = 1e-5,
) -> float:
    """
    Largest relative error between autograd and central differences over
    randomly chosen parameter coordinates. objective() must be a
    deterministic scalar of the current parameters.
    """
    params = [p for p in model.parameters() if p.requires_grad]
    loss = objective()
    analytic = torch.cat([g.reshape(-1) for g in torch.autograd.grad(loss, params)]).detach().numpy()
    flat = torch.nn.utils.parameters_to_vector(params).detach().clone()
    picks = rng.choice(flat.numel(), size=min(coords, flat.numel()), replace=False)
    worst = 0.0
    with torch.no_grad():
        for i in picks:
            orig = flat[i].item()
            flat[i] = orig + step
            torch.nn.utils.vector_to_parameters(flat, params)
            up = objective().item()
            flat[i] = orig - step
            torch.nn.utils.vector_to_parameters(flat, params)
            down = objective().item()
            flat[i] = orig
            torch.nn.utils.vector_to_parameters(flat, params)
            numeric = (up - down) / (2.0 * step)
            scale = max(abs(numeric), abs(analytic[i]), 1e-6)
            worst = max(worst, abs(numeric - analytic[i]) / scale)
    return worst


def build_model(kind: str, spec: dict) -> torch.nn.Module:
    if kind == "mlp":
        return Mlp(MlpSpec(**spec))
    if kind == "kan":
        return Kan(KanSpec(**spec))
    raise ArtifactError(f"unknown model kind {kind}")


def model_kind(model: torch.nn.Module) -> str:
    if isinstance(model, Kan):
        return "kan"
    if isinstance(model, Mlp):
        return "mlp"
    raise ArtifactError(f"cannot serialize {type(model).__name__}")


def model_to_dict(model: torch.nn.Module, extra: dict[str, Any] | None = None) -> dict:
    data = {
        "version": MODEL_FILE_VERSION,
        "kind": model_kind(model),
        "spec": model.spec.to_dict(),  # type: ignore[union-attr]
        **ParamVector.of(model).to_dict(),
    }
    if isinstance(model, Kan):
        grids = torch.cat([layer.grid.reshape(-1) for layer in model.layers]).numpy()
        data["grids"] = encode_floats(grids)
    if extra:
        data.update(extra)
    return data


def model_from_dict(data: dict) -> torch.nn.Module:
    if data.get("version") != MODEL_FILE_VERSION:
        raise ArtifactError(f"unsupported model file version {data.get('version')}")
    model = build_model(data["kind"], data["spec"])
    ParamVector.from_dict(data).load_into(model)
    if isinstance(model, Kan) and "grids" in data:
        grids = torch.as_tensor(decode_floats(data["grids"]))
        offset = 0
        with torch.no_grad():
            for layer in model.layers:
                n = layer.grid.numel()
                layer.grid.copy_(grids[offset : offset + n].reshape(layer.grid.shape))
                offset += n
    return model
