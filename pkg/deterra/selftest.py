"""
Oracle suites run by `deterra selftest`. Each suite compares a production
routine against an independent computation (dense linear algebra,
quadrature, naive sums or hand arithmetic) and reports its worst error.
"""

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch
from scipy import integrate, optimize, stats

from .config import EnvConfig, ExperimentConfig
from .env.cmdp import CfMimoEnv
from .env.phy import RawAction, compute_bits, decode_action
from .genmodel.vae_chmdn import VaeChmdnSpec, build_vae_chmdn
from .logs import get_logger
from .mathcore import BlockSplit, CholeskyGaussian, chi2_quantile, conditional_block, make_rng, marginal_block
from .nn.kan import Kan, KanSpec
from .nn.mlp import Mlp, MlpSpec
from .nn.params import finite_difference_check
from .nn.train import seeded_init
from .rl.baselines import behavior_policy_uniform
from .rl.buffer import discounted_advantages

logger = get_logger(__name__)

SCHUR_CASES = 1000
SCHUR_TOL = 1e-8
CHI2_ALPHA = 0.03
CHI2_TOL = 1e-6
CHI2_SPOT = 4.7093
FBL_SPOT = 3615.1
FBL_TOL = 0.5
GRAD_TOL = 1e-4
GAE_TOL = 1e-10
CONSERVATION_EPISODES = 100


@dataclass
class SuiteResult:
    name: str
    passed: bool
    worst: float
    detail: str
    seconds: float = 0.0


@dataclass
class SelftestReport:
    suites: list[SuiteResult]

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.suites)

    def table(self) -> str:
        lines = [f"{'suite':<14} {'result':<6} {'worst':>12} {'secs':>7}  detail"]
        for s in self.suites:
            verdict = "PASS" if s.passed else "FAIL"
            lines.append(f"{s.name:<14} {verdict:<6} {s.worst:>12.3e} {s.seconds:>7.2f}  {s.detail}")
        return "\n".join(lines)


def _random_spd_gaussian(n: int, rng: np.random.Generator) -> CholeskyGaussian:
    a = rng.standard_normal((n, n))
    cov = a @ a.T / n + 0.5 * np.eye(n)
    return CholeskyGaussian.from_covariance(rng.standard_normal(n), cov)


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def suite_schur(seed: int, cases: int = SCHUR_CASES) -> SuiteResult:
    """Cholesky-of-precision marginal/conditional vs dense covariance blocks."""
    rng = make_rng(seed, 101)
    worst = 0.0
    for _ in range(cases):
        n = int(rng.integers(2, 21))
        m = int(rng.integers(1, n))
        g = _random_spd_gaussian(n, rng)
        sigma = np.linalg.inv(g.precision())
        split = BlockSplit(m)
        marg = marginal_block(g, split)
        worst = max(worst, _rel(marg.covariance(), sigma[m:, m:]), _rel(marg.mean, g.mean[m:]))

        x2 = g.mean[m:] + rng.standard_normal(n - m)
        s11, s12, s22 = sigma[:m, :m], sigma[:m, m:], sigma[m:, m:]
        gain = s12 @ np.linalg.inv(s22)
        mean = g.mean[:m] + gain @ (x2 - g.mean[m:])
        cov = s11 - gain @ s12.T
        cond = conditional_block(g, split, x2)
        worst = max(worst, _rel(cond.mean, mean), _rel(cond.covariance(), cov))
    return SuiteResult("schur", worst <= SCHUR_TOL, worst, f"{cases} random SPD joints, n in [2, 20]")


def _chi2_tail_quantile(d: int, alpha: float) -> float:
    def tail(q: float) -> float:
        return integrate.quad(stats.chi2(d).pdf, q, np.inf, epsabs=1e-14, epsrel=1e-12, limit=200)[0] - alpha

    return optimize.brentq(tail, 1e-6, 20.0 * d + 50.0, xtol=1e-12)


def suite_chi2(seed: int, max_dof: int = 50) -> SuiteResult:
    """chi2_quantile vs bracketed root-finding on the quadrature tail."""
    worst = 0.0
    spot_ok = abs(chi2_quantile(1, CHI2_ALPHA) - CHI2_SPOT) < 5e-4
    for d in range(1, max_dof + 1):
        q = chi2_quantile(d, CHI2_ALPHA)
        ref = _chi2_tail_quantile(d, CHI2_ALPHA)
        worst = max(worst, abs(q - ref) / max(1.0, ref))
    return SuiteResult("chi2", spot_ok and worst <= CHI2_TOL, worst, f"d = 1..{max_dof}, alpha = {CHI2_ALPHA}")


def suite_fbl(seed: int) -> SuiteResult:
    """Single-subband bit count vs scalar arithmetic at gamma = 5."""
    cfg = EnvConfig(K=1, C=20, N=75, eps=1e-6)
    gamma = 5.0
    n = cfg.C * cfg.N
    dispersion = math.log2(math.e) ** 2 * (1.0 - 1.0 / (1.0 + gamma) ** 2)
    expected = n * math.log2(1.0 + gamma) - stats.norm.isf(cfg.eps) * math.sqrt(n * dispersion)
    got = compute_bits(cfg, np.array([gamma]))
    err = max(abs(got - expected), abs(got - FBL_SPOT))
    return SuiteResult("fbl", err <= FBL_TOL, err, f"psi = {got:.2f} bits")


def _gradient_cases(seed: int) -> list[tuple[str, torch.nn.Module, Callable[[], torch.Tensor]]]:
    gen = torch.Generator().manual_seed(seed)
    x = torch.rand(16, 4, generator=gen, dtype=torch.float64) * 2.0 - 1.0
    y = torch.randn(16, 1, generator=gen, dtype=torch.float64)
    with seeded_init(seed):
        mlp = Mlp(MlpSpec([4, 8, 8, 1], activation="silu"))
        kan = Kan(KanSpec([4, 3, 1], grid_size=5, spline_order=3))
    vae = build_vae_chmdn(VaeChmdnSpec(dim=3, latent_dim=2, components=2, hidden=[8]), seed)
    xv = torch.randn(8, 3, generator=gen, dtype=torch.float64)
    eps = torch.randn(8, 2, generator=gen, dtype=torch.float64)
    return [
        ("mlp", mlp, lambda: torch.mean((mlp(x) - y) ** 2)),
        ("kan", kan, lambda: torch.mean((kan(x) - y) ** 2)),
        ("vae_chmdn", vae, lambda: vae(xv, eps)),
    ]


def suite_gradients(seed: int) -> SuiteResult:
    """Autograd vs central differences for each trainable network family."""
    rng = make_rng(seed, 102)
    errors = {name: finite_difference_check(model, obj, rng) for name, model, obj in _gradient_cases(seed)}
    worst = max(errors.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errors.items())
    return SuiteResult("gradients", worst <= GRAD_TOL, worst, detail)


def suite_gae(seed: int, n: int = 200) -> SuiteResult:
    """Backward recursion vs the explicit sum of discounted TD errors per episode."""
    rng = make_rng(seed, 103)
    rewards, values = rng.standard_normal(n), rng.standard_normal(n)
    dones = np.zeros(n, dtype=bool)
    dones[rng.choice(n - 1, size=5, replace=False)] = True
    dones[-1] = True
    gamma, lam = 0.97, 0.9
    adv = discounted_advantages(rewards, values, dones, gamma, lam)

    deltas = np.empty(n)
    for t in range(n):
        nxt = 0.0 if dones[t] else values[t + 1]
        deltas[t] = rewards[t] + gamma * nxt - values[t]
    worst = 0.0
    for t in range(n):
        total, k = 0.0, 0
        while True:
            total += (gamma * lam) ** k * deltas[t + k]
            if dones[t + k]:
                break
            k += 1
        worst = max(worst, abs(total - adv[t]))
    return SuiteResult("gae", worst <= GAE_TOL, worst, f"{n} steps, {int(dones.sum())} episodes")


def suite_conservation(cfg: ExperimentConfig, seed: int, episodes: int = CONSERVATION_EPISODES) -> SuiteResult:
    """
    Every arrival is transmitted, expired, dropped or still buffered; every
    decoded power vector sums to the AP budget.
    """
    env = CfMimoEnv(cfg.env)
    rng = make_rng(seed, 104)
    mismatches, power_err = 0, 0.0
    for _ in range(episodes):
        state = env.reset(rng)
        accounted = env.reset_drops.copy()
        for _ in range(cfg.env.horizon):
            action = behavior_policy_uniform(cfg.env.action_dim, rng)
            power = decode_action(cfg.env, RawAction.from_vector(cfg.env, action)).power
            power_err = max(power_err, float(np.max(np.abs(power.sum(axis=(1, 2)) - cfg.env.p_max))) / cfg.env.p_max)
            out = env.step(state, action, rng)
            accounted += out.tx + out.vio + out.drop
            state = out.next_state
        accounted += state.q_buf
        mismatches += int(np.sum(accounted != env.arrived))
    ok = mismatches == 0 and power_err <= 1e-12
    detail = f"{episodes} episodes, {mismatches} UE mismatches, power rel err {power_err:.1e}"
    return SuiteResult("conservation", ok, power_err + mismatches, detail)


def run_selftest(cfg: ExperimentConfig, seed: int) -> SelftestReport:
    suites: list[tuple[str, Callable[[], SuiteResult]]] = [
        ("schur", lambda: suite_schur(seed)),
        ("chi2", lambda: suite_chi2(seed)),
        ("fbl", lambda: suite_fbl(seed)),
        ("gradients", lambda: suite_gradients(seed)),
        ("gae", lambda: suite_gae(seed)),
        ("conservation", lambda: suite_conservation(cfg, seed)),
    ]
    results = []
    for name, run in suites:
        start = time.perf_counter()
        try:
            res = run()
        except Exception as e:  # a crashing suite is a failed suite
            logger.exception(f"Suite {name} raised")
            res = SuiteResult(name, False, float("nan"), f"{type(e).__name__}: {e}")
        res.seconds = time.perf_counter() - start
        logger.info(f"Suite {name}: {'pass' if res.passed else 'FAIL'} ({res.seconds:.1f}s)")
        results.append(res)
    return SelftestReport(results)


def cmd_selftest(cfg: ExperimentConfig, seed: int) -> SelftestReport:
    report = run_selftest(cfg, seed)
    print(report.table())
    return report
