"""Uniform behavior policy for data collection and the drift-plus-penalty scheduler."""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..logs import get_logger
from .contract import StateCmdp, Transition
from .policy import ACTION_BOUND

logger = get_logger(__name__)

Predictor = Callable[[np.ndarray], np.ndarray]


def behavior_policy_uniform(action_dim: int, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. uniform raw action on (-1, 1)^action_dim."""
    return np.clip(rng.uniform(-1.0, 1.0, size=action_dim), -ACTION_BOUND, ACTION_BOUND)


def update_virtual_queue(z: float, cost: float, threshold: float) -> float:
    return max(z + cost - threshold, 0.0)


@dataclass
class LyapunovScheduler:
    """
    Per slot, score uniform candidate actions by -r(s, a) + V * Z * (c(s, a) - d)
    with learned reward/cost predictors and keep the lowest score. Z is a
    virtual queue of accumulated constraint excess.
    """

    predict_reward: Predictor
    predict_cost: Predictor
    threshold: float
    weight: float = 10.0
    candidates: int = 200
    z: float = 0.0

    def scores(self, state_vec: np.ndarray, actions: np.ndarray) -> np.ndarray:
        x = np.hstack([np.tile(state_vec, (actions.shape[0], 1)), actions])
        reward = self.predict_reward(x)
        cost = self.predict_cost(x)
        return -reward + self.weight * self.z * (cost - self.threshold)

    def choose(self, state_vec: np.ndarray, action_dim: int, rng: np.random.Generator) -> np.ndarray:
        actions = np.stack([behavior_policy_uniform(action_dim, rng) for _ in range(self.candidates)])
        # argmin returns the first index on ties
        return actions[int(np.argmin(self.scores(state_vec, actions)))]

    def observe(self, cost: float) -> None:
        self.z = update_virtual_queue(self.z, cost, self.threshold)


def lyapunov_baseline(
    cmdp: StateCmdp, sched: LyapunovScheduler, rng: np.random.Generator
) -> tuple[np.ndarray, float, Transition]:
    """
    One drift-plus-penalty slot: choose from the current state, step the
    CMDP and advance Z with the observed cost. Returns (action, Z', transition).
    """
    if cmdp.state is None:
        raise RuntimeError("lyapunov_baseline() called before reset()")
    action = sched.choose(cmdp.state.vector(), cmdp.action_dim, rng)
    tr = cmdp.step(action, rng)
    sched.observe(tr.cost)
    return action, sched.z, tr


def evaluate_lyapunov(
    cmdp: StateCmdp, sched: LyapunovScheduler, n_episodes: int, rng: np.random.Generator
) -> dict[str, float]:
    """Run the scheduler in a state-tracking CMDP; same keys as evaluate_policy."""
    ee, viol = [], []
    for _ in range(n_episodes):
        cmdp.reset(rng)
        sched.z = 0.0
        rewards, costs = [], []
        for _ in range(cmdp.horizon):
            _, _, tr = lyapunov_baseline(cmdp, sched, rng)
            rewards.append(tr.reward)
            costs.append(tr.cost)
        ee.append(float(np.mean(rewards)))
        viol.append(float(np.mean(costs)))
    logger.info(f"Lyapunov baseline over {n_episodes} episodes: EE {np.mean(ee):.4g}, violation {np.mean(viol):.4f}")
    return {
        "ee_mean": float(np.mean(ee)),
        "ee_std": float(np.std(ee)),
        "viol_mean": float(np.mean(viol)),
        "viol_std": float(np.std(viol)),
    }
