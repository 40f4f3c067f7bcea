"""PPO with a clipped surrogate on Lagrangian-combined advantages, plus the dual ascent step."""

from dataclasses import dataclass, field

import numpy as np
import torch

from ..config import PpoConfig
from ..errors import NumericalError
from ..logs import get_logger
from .buffer import GaeResult, RolloutBuffer, gae, normalize
from .policy import ActorCritic

logger = get_logger(__name__)


@dataclass
class DualState:
    lam: float = 0.0

    def __post_init__(self):
        if self.lam < 0.0:
            raise ValueError("the Lagrange multiplier must be non-negative")


def dual_update(dual: DualState, cost_mean: float, cfg: PpoConfig) -> DualState:
    """Projected ascent: lambda <- max(lambda + lr * (V_c - d), 0)."""
    return DualState(max(dual.lam + cfg.dual_lr * (cost_mean - cfg.cost_threshold), 0.0))


def clipped_surrogate(ratio: torch.Tensor, adv: torch.Tensor, clip: float) -> torch.Tensor:
    """Per-sample min(ratio * A, clip(ratio, 1 - clip, 1 + clip) * A)."""
    return torch.minimum(ratio * adv, torch.clamp(ratio, 1.0 - clip, 1.0 + clip) * adv)


@dataclass
class PpoLearner:
    ac: ActorCritic
    cfg: PpoConfig
    policy_opt: torch.optim.Optimizer = field(init=False)
    value_opt: torch.optim.Optimizer = field(init=False)

    def __post_init__(self):
        self.policy_opt = torch.optim.Adam(self.ac.policy_parameters(), lr=self.cfg.policy_lr)
        self.value_opt = torch.optim.Adam(self.ac.value_parameters(), lr=self.cfg.value_lr)


def combined_advantage(adv: GaeResult, lam: float) -> np.ndarray:
    return normalize(adv.adv_r - lam * adv.adv_c)


def ppo_update(
    learner: PpoLearner, buf: RolloutBuffer, dual: DualState, rng: np.random.Generator
) -> dict[str, float]:
    """
    update_epochs passes of minibatch Adam over the buffer. The policy
    maximizes the clipped surrogate of A_r - lambda * A_c; both critics
    regress their return targets with MSE.
    """
    cfg = learner.cfg
    ac = learner.ac
    n = buf.size
    est = gae(buf, cfg.gamma, cfg.gae_lambda)
    obs = torch.as_tensor(buf.obs[:n], dtype=torch.float64)
    pre = torch.as_tensor(buf.pre_actions[:n], dtype=torch.float64)
    old_logp = torch.as_tensor(buf.log_probs[:n], dtype=torch.float64)
    adv = torch.as_tensor(combined_advantage(est, dual.lam), dtype=torch.float64)
    ret_r = torch.as_tensor(est.ret_r, dtype=torch.float64)
    ret_c = torch.as_tensor(est.ret_c, dtype=torch.float64)

    policy_losses, value_losses, clip_fracs, kls = [], [], [], []
    for _ in range(cfg.update_epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            idx = torch.as_tensor(perm[start : start + cfg.minibatch_size])
            logp = ac.log_prob(obs[idx], pre[idx])
            ratio = torch.exp(logp - old_logp[idx])
            policy_loss = -clipped_surrogate(ratio, adv[idx], cfg.clip_ratio).mean()
            v_r, v_c = ac.values(obs[idx])
            value_loss = torch.mean((v_r - ret_r[idx]) ** 2) + torch.mean((v_c - ret_c[idx]) ** 2)
            if not (torch.isfinite(policy_loss) and torch.isfinite(value_loss)):
                raise NumericalError("non-finite PPO loss, update aborted")

            learner.policy_opt.zero_grad()
            policy_loss.backward()
            torch.nn.utils.clip_grad_norm_(ac.policy_parameters(), cfg.max_grad_norm)
            learner.policy_opt.step()

            learner.value_opt.zero_grad()
            value_loss.backward()
            torch.nn.utils.clip_grad_norm_(ac.value_parameters(), cfg.max_grad_norm)
            learner.value_opt.step()

            with torch.no_grad():
                policy_losses.append(float(policy_loss))
                value_losses.append(float(value_loss))
                clip_fracs.append(float(((ratio - 1.0).abs() > cfg.clip_ratio).double().mean()))
                kls.append(float((old_logp[idx] - logp).mean()))
    stats = {
        "policy_loss": float(np.mean(policy_losses)),
        "value_loss": float(np.mean(value_losses)),
        "clip_fraction": float(np.mean(clip_fracs)),
        "approx_kl": float(np.mean(kls)),
    }
    logger.debug(f"PPO update: {stats}")
    return stats
