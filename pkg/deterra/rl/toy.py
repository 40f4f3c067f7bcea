"""
Two-state, two-action CMDP with enumerable deterministic policies.

Action 0 moves to state 1, action 1 moves back to state 0. Action 0 pays
0.3 in state 0 and 0.6 in state 1 at no cost; action 1 pays 1.0 at cost 0.5
in either state. Returns are per-step means over the horizon from state 0.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from .contract import Transition

REWARD = np.array([[0.3, 1.0], [0.6, 1.0]])
COST = np.array([[0.0, 0.5], [0.0, 0.5]])


def next_state(action: int) -> int:
    return 1 if action == 0 else 0


def discrete_action(action: np.ndarray) -> int:
    return int(np.asarray(action).reshape(-1)[0] >= 0.0)


class ToyCmdp:
    obs_dim = 2
    action_dim = 1

    def __init__(self, horizon: int = 20):
        self.horizon = horizon
        self.state = 0

    def _obs(self) -> np.ndarray:
        obs = np.zeros(2)
        obs[self.state] = 1.0
        return obs

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.state = 0
        return self._obs()

    def step(self, action: np.ndarray, rng: np.random.Generator) -> Transition:
        a = discrete_action(action)
        reward, cost = float(REWARD[self.state, a]), float(COST[self.state, a])
        self.state = next_state(a)
        return Transition(obs=self._obs(), reward=reward, cost=cost, info={"action": a})


@dataclass(frozen=True)
class DeterministicPolicyValue:
    actions: tuple[int, int]  # action taken in state 0 and in state 1
    mean_reward: float
    mean_cost: float


def enumerate_policies(horizon: int = 20) -> list[DeterministicPolicyValue]:
    out = []
    for actions in itertools.product((0, 1), repeat=2):
        s, total_r, total_c = 0, 0.0, 0.0
        for _ in range(horizon):
            a = actions[s]
            total_r += REWARD[s, a]
            total_c += COST[s, a]
            s = next_state(a)
        out.append(DeterministicPolicyValue(actions, total_r / horizon, total_c / horizon))
    return out


def best_constrained(threshold: float, horizon: int = 20) -> DeterministicPolicyValue:
    feasible = [p for p in enumerate_policies(horizon) if p.mean_cost <= threshold]
    return max(feasible, key=lambda p: p.mean_reward)
