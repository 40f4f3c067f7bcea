from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..logs import get_logger
from .buffer import RolloutBuffer
from .contract import Cmdp
from .policy import Actor, ActorCritic, act, as_actor
from .ppo import DualState, PpoLearner, dual_update, ppo_update

logger = get_logger(__name__)


@dataclass
class CurvePoint:
    episode: int
    reward_mean: float
    cost_mean: float
    lam: float
    seed: int

    def row(self) -> tuple:
        return (self.episode, self.reward_mean, self.cost_mean, self.lam, self.seed)


@dataclass
class TrainResult:
    curve: list[CurvePoint] = field(default_factory=list)
    dual: DualState = field(default_factory=DualState)
    updates: list[dict[str, float]] = field(default_factory=list)


EpisodeCallback = Callable[[int, PpoLearner, DualState], None]


def train_loop(
    cmdp: Cmdp,
    learner: PpoLearner,
    episodes: int,
    rng: np.random.Generator,
    dual: DualState | None = None,
    seed: int = 0,
    callback: EpisodeCallback | None = None,
) -> TrainResult:
    """
    Collect episodes_per_update episodes, run one PPO update and one dual
    step, repeat. A warm start is just a learner built around a loaded
    policy. Curves carry unscaled per-slot means.
    """
    cfg = learner.cfg
    dual = dual if dual is not None else DualState(cfg.lambda_init)
    buf = RolloutBuffer(cfg.episodes_per_update * cmdp.horizon, cmdp.obs_dim, cmdp.action_dim)
    result = TrainResult(dual=dual)
    batch_costs: list[float] = []

    for ep in range(episodes):
        obs = cmdp.reset(rng)
        rewards, costs = [], []
        for t in range(cmdp.horizon):
            step = act(learner.ac, obs, rng)
            tr = cmdp.step(step.action, rng)
            buf.add(
                obs,
                step.pre_action,
                step.log_prob,
                tr.reward * cfg.reward_scale,
                tr.cost,
                step.value_r,
                step.value_c,
                t == cmdp.horizon - 1,
            )
            rewards.append(tr.reward)
            costs.append(tr.cost)
            obs = tr.obs
        result.curve.append(CurvePoint(ep + 1, float(np.mean(rewards)), float(np.mean(costs)), dual.lam, seed))
        batch_costs.extend(costs)

        if buf.full or ep == episodes - 1:
            result.updates.append(ppo_update(learner, buf, dual, rng))
            dual = dual_update(dual, float(np.mean(batch_costs)), cfg)
            buf.clear()
            batch_costs = []
            logger.info(
                f"seed {seed} episode {ep + 1}/{episodes}: reward {result.curve[-1].reward_mean:.4g}, "
                f"cost {result.curve[-1].cost_mean:.4f}, lambda {dual.lam:.4f}"
            )
        if callback is not None:
            callback(ep + 1, learner, dual)

    result.dual = dual
    return result


def evaluate_policy(
    cmdp: Cmdp,
    policy: ActorCritic | Actor,
    n_episodes: int,
    rng: np.random.Generator,
    deterministic: bool = False,
) -> dict[str, float]:
    """Per-episode mean EE and mean violation rate, aggregated over episodes."""
    actor = as_actor(policy, deterministic)
    ee, viol = [], []
    for _ in range(n_episodes):
        obs = cmdp.reset(rng)
        rewards, costs = [], []
        for _ in range(cmdp.horizon):
            tr = cmdp.step(actor(obs, rng), rng)
            rewards.append(tr.reward)
            costs.append(tr.cost)
            obs = tr.obs
        ee.append(float(np.mean(rewards)))
        viol.append(float(np.mean(costs)))
    return {
        "ee_mean": float(np.mean(ee)),
        "ee_std": float(np.std(ee)),
        "viol_mean": float(np.mean(viol)),
        "viol_std": float(np.std(viol)),
    }
