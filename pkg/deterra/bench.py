"""
Multiply-add counts of the per-slot inference path as the network grows.
Counts are analytic, derived from the same specs the models are built from.
"""

import dataclasses

from .config import EnvConfig, ExperimentConfig
from .genmodel.vae_chmdn import VaeChmdnSpec
from .logs import get_logger
from .nn.kan import KanSpec
from .nn.mlp import MlpSpec
from .storage import Storage
from .util import store_csv

logger = get_logger(__name__)

BENCH_HEADER = ["B", "U", "K", "M", "module", "ops"]
BENCH_SIZES = range(2, 9)


def mlp_ops(spec: MlpSpec) -> int:
    return sum(a * b for a, b in zip(spec.widths, spec.widths[1:]))


def kan_ops(spec: KanSpec) -> int:
    """
    Per input: Cox-de Boor recursion over g + 2d knots, two multiply-adds per
    basis update. Per edge: g + d spline coefficients plus the base weight.
    """
    g, d = spec.grid_size, spec.spline_order
    total = 0
    for a, b in zip(spec.widths, spec.widths[1:]):
        basis = a * sum(2 * (g + 2 * d - k) for k in range(1, d + 1))
        total += basis + a * b * (g + d + 1)
    return total


def vae_generate_ops(spec: VaeChmdnSpec) -> int:
    """Decoder pass from one latent draw; the encoder is not used at generation time."""
    return mlp_ops(spec.decoder_spec())


def ea_cgmm_ops(n1: int, n2: int, components: int) -> int:
    """
    Per component: triangular Mahalanobis on the condition block, the U12
    product and a triangular solve for the conditional mean. One triangular
    solve to sample the chosen component.
    """
    tri2 = n2 * (n2 + 1) // 2
    tri1 = n1 * (n1 + 1) // 2
    return components * (tri2 + n1 * n2 + tri1) + tri1


def module_ops(cfg: ExperimentConfig) -> dict[str, int]:
    env, v = cfg.env, cfg.virtual
    S, A, U, p = env.state_dim, env.action_dim, env.U, env.pbm_dim
    G = v.transition_components
    kan = KanSpec([S + A, *v.kan_hidden, 1], grid_size=v.grid_size, spline_order=v.spline_order)
    vae_channel = VaeChmdnSpec(2 * p, v.latent_dim, G, list(v.vae_hidden))
    vae_queue = VaeChmdnSpec(2 * U + A + S, v.latent_dim, G, list(v.vae_hidden))
    return {
        "policy": mlp_ops(MlpSpec([S, *cfg.ppo.hidden, A])),
        "kan_reward_cost": 2 * kan_ops(kan),
        "vae_chmdn_generate": vae_generate_ops(vae_channel) + vae_generate_ops(vae_queue),
        "ea_cgmm": ea_cgmm_ops(p, p, G) + ea_cgmm_ops(2 * U, A + S, G),
    }


def bench_rows(cfg: ExperimentConfig) -> list[tuple]:
    rows = []
    for n in BENCH_SIZES:
        env: EnvConfig = dataclasses.replace(cfg.env, B=n, U=n, K=n, M=n)
        sized = dataclasses.replace(cfg, env=env)
        for module, ops in module_ops(sized).items():
            rows.append((n, n, n, n, module, ops))
    return rows


def cmd_bench(cfg: ExperimentConfig, storage: Storage) -> list[tuple]:
    rows = bench_rows(cfg)
    print(",".join(BENCH_HEADER))
    for row in rows:
        print(",".join(str(c) for c in row))
    store_csv(storage, "reports/bench.csv", BENCH_HEADER, rows)
    logger.info(f"Operation counts for {len(BENCH_SIZES)} network sizes written to reports/bench.csv")
    return rows
