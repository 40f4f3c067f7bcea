"""
Kolmogorov-Arnold network: every edge carries its own univariate function
phi(x) = w_b * silu(x) + w_s * sum_i c_i B_i(x) with B_i order-d B-splines on
a per-input knot vector; nodes add their incoming edges.
"""

import math
from dataclasses import asdict, dataclass, field

import torch
import torch.nn.functional as F


@dataclass
class KanSpec:
    widths: list[int]
    grid_size: int = 10
    spline_order: int = 3
    grid_eps: float = 0.1
    grid_range: list[float] = field(default_factory=lambda: [-1.0, 1.0])

    def __post_init__(self):
        if len(self.widths) < 2 or any(w < 1 for w in self.widths):
            raise ValueError("KAN widths need at least two positive entries")
        if self.grid_size < 1 or self.spline_order < 1:
            raise ValueError("grid_size and spline_order must be >= 1")
        if not 0.0 <= self.grid_eps <= 1.0:
            raise ValueError("grid_eps must lie in [0, 1]")
        if self.grid_range[0] >= self.grid_range[1]:
            raise ValueError("grid_range must be increasing")

    def to_dict(self) -> dict:
        return asdict(self)

    def param_count(self) -> int:
        per_edge = self.grid_size + self.spline_order + 2
        return sum(a * b * per_edge for a, b in zip(self.widths, self.widths[1:]))


def uniform_grid(in_dim: int, grid_size: int, order: int, lo: float, hi: float) -> torch.Tensor:
    h = (hi - lo) / grid_size
    knots = lo + h * torch.arange(-order, grid_size + order + 1, dtype=torch.float64)
    return knots.expand(in_dim, -1).contiguous()


def bspline_basis(x: torch.Tensor, grid: torch.Tensor, order: int) -> torch.Tensor:
    """
    Cox-de Boor recursion. x is (..., in), grid is (in, g + 2*order + 1);
    returns (..., in, g + order). x is clamped into the core grid range
    [grid[:, order], grid[:, -order-1]] so the basis always sums to one.
    """
    if grid.dim() == 1:
        grid = grid.unsqueeze(0)
    lo = grid[:, order]
    hi = grid[:, -order - 1]
    # the last core interval is half-open, keep the upper end just inside it
    hi_in = hi - 1e-9 * (hi - lo)
    x = torch.minimum(torch.maximum(x, lo), hi_in).unsqueeze(-1)

    bases = ((x >= grid[:, :-1]) & (x < grid[:, 1:])).to(x.dtype)
    for k in range(1, order + 1):
        left = (x - grid[:, : -(k + 1)]) / (grid[:, k:-1] - grid[:, : -(k + 1)]) * bases[..., :-1]
        right = (grid[:, k + 1 :] - x) / (grid[:, k + 1 :] - grid[:, 1:-k]) * bases[..., 1:]
        bases = left + right
    return bases


class KanLayer(torch.nn.Module):
    def __init__(self, in_dim: int, out_dim: int, spec: KanSpec):
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.grid_size = spec.grid_size
        self.order = spec.spline_order
        self.grid_eps = spec.grid_eps
        self.lo, self.hi = spec.grid_range
        self.register_buffer(
            "grid", uniform_grid(in_dim, spec.grid_size, spec.spline_order, self.lo, self.hi)
        )
        n_basis = spec.grid_size + spec.spline_order
        self.base_weight = torch.nn.Parameter(torch.empty(out_dim, in_dim, dtype=torch.float64))
        self.spline_scaler = torch.nn.Parameter(torch.empty(out_dim, in_dim, dtype=torch.float64))
        self.spline_weight = torch.nn.Parameter(torch.empty(out_dim, in_dim, n_basis, dtype=torch.float64))
        self.reset_parameters()

    def reset_parameters(self) -> None:
        torch.nn.init.kaiming_uniform_(self.base_weight, a=math.sqrt(5))
        torch.nn.init.kaiming_uniform_(self.spline_scaler, a=math.sqrt(5))
        torch.nn.init.normal_(self.spline_weight, mean=0.0, std=0.1)

    @torch.no_grad()
    def place_grid(self, x: torch.Tensor) -> None:
        """Blend the uniform grid with a data-quantile grid by grid_eps."""
        q = torch.linspace(0.0, 1.0, self.grid_size + 1, dtype=torch.float64)
        adaptive = torch.quantile(x.to(torch.float64), q, dim=0).T  # (in, g+1)
        uniform = torch.linspace(self.lo, self.hi, self.grid_size + 1, dtype=torch.float64).expand(self.in_dim, -1)
        core = self.grid_eps * uniform + (1.0 - self.grid_eps) * adaptive
        step = (core[:, -1:] - core[:, :1]) / self.grid_size
        ext = torch.arange(1, self.order + 1, dtype=torch.float64)
        grid = torch.cat([core[:, :1] - step * ext.flip(0), core, core[:, -1:] + step * ext], dim=1)
        self.grid.copy_(grid)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        base = F.linear(F.silu(x), self.base_weight)
        splines = bspline_basis(x, self.grid, self.order)  # (N, in, g+d)
        weights = self.spline_weight * self.spline_scaler.unsqueeze(-1)
        return base + torch.einsum("nib,oib->no", splines, weights)


class Kan(torch.nn.Module):
    def __init__(self, spec: KanSpec):
        super().__init__()
        self.spec = spec
        self.layers = torch.nn.ModuleList(
            KanLayer(a, b, spec) for a, b in zip(spec.widths, spec.widths[1:])
        )

    @torch.no_grad()
    def place_grids(self, x: torch.Tensor) -> None:
        """One-off grid placement from training inputs before optimization starts."""
        for layer in self.layers:
            layer.place_grid(x)
            x = layer(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for layer in self.layers:
            x = layer(x)
        return x


def kan_forward(model: Kan, x: torch.Tensor) -> torch.Tensor:
    return model(x)
