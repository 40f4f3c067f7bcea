"""Tanh-squashed diagonal Gaussian policy with separate reward and cost critics."""

import dataclasses
import math
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F

from ..config import PpoConfig
from ..errors import ArtifactError
from ..nn.mlp import Mlp, MlpSpec
from ..nn.params import model_from_dict, model_to_dict
from ..nn.train import seeded_init
from ..util import load_json, save_json

LOG_STD_MIN = -5.0
LOG_STD_MAX = 1.0
# keeps squashed actions strictly inside (-1, 1) in float64
ACTION_BOUND = 1.0 - 1e-12
CHECKPOINT_VERSION = 1

Actor = Callable[[np.ndarray, np.random.Generator], np.ndarray]


def log1m_tanh_sq(pre: torch.Tensor) -> torch.Tensor:
    """log(1 - tanh(x)^2) without cancellation for large |x|."""
    return 2.0 * (math.log(2.0) - pre - F.softplus(-2.0 * pre))


class ActorCritic(torch.nn.Module):
    def __init__(self, obs_dim: int, action_dim: int, cfg: PpoConfig):
        super().__init__()
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        hidden = list(cfg.hidden)
        self.actor = Mlp(MlpSpec([obs_dim, *hidden, action_dim], activation=cfg.activation))
        self.log_std = torch.nn.Parameter(torch.full((action_dim,), float(cfg.log_std_init), dtype=torch.float64))
        self.value_r = Mlp(MlpSpec([obs_dim, *hidden, 1], activation=cfg.activation))
        self.value_c = Mlp(MlpSpec([obs_dim, *hidden, 1], activation=cfg.activation))

    def policy_parameters(self) -> list[torch.nn.Parameter]:
        return [*self.actor.parameters(), self.log_std]

    def value_parameters(self) -> list[torch.nn.Parameter]:
        return [*self.value_r.parameters(), *self.value_c.parameters()]

    def std(self) -> torch.Tensor:
        return torch.exp(self.log_std.clamp(LOG_STD_MIN, LOG_STD_MAX))

    def log_prob(self, obs: torch.Tensor, pre: torch.Tensor) -> torch.Tensor:
        """Log density of the squashed action tanh(pre), summed over action dims."""
        mean = self.actor(obs)
        log_std = self.log_std.clamp(LOG_STD_MIN, LOG_STD_MAX)
        z = (pre - mean) / torch.exp(log_std)
        gauss = -0.5 * z * z - log_std - 0.5 * math.log(2.0 * math.pi)
        return torch.sum(gauss - log1m_tanh_sq(pre), dim=-1)

    def values(self, obs: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return self.value_r(obs).squeeze(-1), self.value_c(obs).squeeze(-1)


def build_actor_critic(obs_dim: int, action_dim: int, cfg: PpoConfig, seed: int) -> ActorCritic:
    with seeded_init(seed):
        return ActorCritic(obs_dim, action_dim, cfg)


@dataclasses.dataclass
class ActResult:
    action: np.ndarray
    pre_action: np.ndarray
    log_prob: float
    value_r: float
    value_c: float


def act(ac: ActorCritic, obs: np.ndarray, rng: np.random.Generator, deterministic: bool = False) -> ActResult:
    """
    Sample pre ~ N(mean, diag sigma^2) and squash with tanh. In deterministic
    mode the action is tanh(mean).
    """
    obs_t = torch.as_tensor(obs, dtype=torch.float64)
    with torch.no_grad():
        mean = ac.actor(obs_t)
        if deterministic:
            pre = mean
        else:
            eps = torch.as_tensor(rng.standard_normal(ac.action_dim), dtype=torch.float64)
            pre = mean + ac.std() * eps
        log_prob = ac.log_prob(obs_t, pre)
        v_r, v_c = ac.values(obs_t)
    action = np.clip(np.tanh(pre.numpy()), -ACTION_BOUND, ACTION_BOUND)
    return ActResult(
        action=action,
        pre_action=pre.numpy().copy(),
        log_prob=float(log_prob),
        value_r=float(v_r),
        value_c=float(v_c),
    )


def as_actor(policy: "ActorCritic | Actor", deterministic: bool = False) -> Actor:
    if isinstance(policy, ActorCritic):
        return lambda obs, rng: act(policy, obs, rng, deterministic).action
    return policy


def save_policy(path: str, ac: ActorCritic, cfg: PpoConfig, extra: dict | None = None) -> None:
    data = {
        "version": CHECKPOINT_VERSION,
        "obs_dim": ac.obs_dim,
        "action_dim": ac.action_dim,
        "ppo": dataclasses.asdict(cfg),
        "actor": model_to_dict(ac.actor),
        "log_std": ac.log_std.detach().numpy().tolist(),
        "value_r": model_to_dict(ac.value_r),
        "value_c": model_to_dict(ac.value_c),
        **(extra or {}),
    }
    save_json(path, data)


def load_policy(path: str) -> tuple[ActorCritic, PpoConfig, dict]:
    data = load_json(path)
    if data.get("version") != CHECKPOINT_VERSION:
        raise ArtifactError(f"unsupported policy checkpoint version {data.get('version')}")
    cfg = PpoConfig(**data["ppo"])
    ac = ActorCritic(int(data["obs_dim"]), int(data["action_dim"]), cfg)
    ac.actor = model_from_dict(data["actor"])  # type: ignore[assignment]
    ac.value_r = model_from_dict(data["value_r"])  # type: ignore[assignment]
    ac.value_c = model_from_dict(data["value_c"])  # type: ignore[assignment]
    with torch.no_grad():
        ac.log_std.copy_(torch.as_tensor(data["log_std"], dtype=torch.float64))
    return ac, cfg, data
