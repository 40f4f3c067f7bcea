from dataclasses import asdict, dataclass

import torch

ACTIVATIONS = {"tanh": torch.nn.Tanh, "silu": torch.nn.SiLU}
OUTPUTS = {"identity": torch.nn.Identity, "tanh": torch.nn.Tanh, "softplus": torch.nn.Softplus}


@dataclass
class MlpSpec:
    widths: list[int]
    activation: str = "tanh"
    output: str = "identity"

    def __post_init__(self):
        if len(self.widths) < 3:
            raise ValueError("an MLP needs input, at least one hidden layer and output widths")
        if any(w < 1 for w in self.widths):
            raise ValueError("all widths must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation}")
        if self.output not in OUTPUTS:
            raise ValueError(f"unknown output activation {self.output}")

    def to_dict(self) -> dict:
        return asdict(self)

    def param_count(self) -> int:
        return sum(a * b + b for a, b in zip(self.widths, self.widths[1:]))


class Mlp(torch.nn.Module):
    """Affine layers with a fixed hidden activation, float64 throughout."""

    def __init__(self, spec: MlpSpec):
        super().__init__()
        self.spec = spec
        layers: list[torch.nn.Module] = []
        pairs = list(zip(spec.widths, spec.widths[1:]))
        for i, (a, b) in enumerate(pairs):
            layers.append(torch.nn.Linear(a, b, dtype=torch.float64))
            if i < len(pairs) - 1:
                layers.append(ACTIVATIONS[spec.activation]())
        layers.append(OUTPUTS[spec.output]())
        self.net = torch.nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


def mlp_forward(model: Mlp, x: torch.Tensor) -> torch.Tensor:
    return model(x)


def width_for_parity(in_dim: int, out_dim: int, target: int, hidden_layers: int = 2) -> int:
    """Hidden width whose MLP parameter count is closest to target."""
    best, best_gap = 1, None
    for w in range(1, 4097):
        spec = MlpSpec([in_dim] + [w] * hidden_layers + [out_dim])
        gap = abs(spec.param_count() - target)
        if best_gap is None or gap < best_gap:
            best, best_gap = w, gap
        if spec.param_count() > target:
            break
    return best
