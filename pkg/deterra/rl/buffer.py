from dataclasses import dataclass

import numpy as np


class RolloutBuffer:
    """Fixed-capacity, episode-aligned store of one update's worth of steps."""

    def __init__(self, capacity: int, obs_dim: int, action_dim: int):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.pre_actions = np.zeros((capacity, action_dim))
        self.log_probs = np.zeros(capacity)
        self.rewards = np.zeros(capacity)
        self.costs = np.zeros(capacity)
        self.values_r = np.zeros(capacity)
        self.values_c = np.zeros(capacity)
        self.dones = np.zeros(capacity, dtype=bool)
        self.size = 0

    @property
    def full(self) -> bool:
        return self.size == self.capacity

    def add(
        self,
        obs: np.ndarray,
        pre_action: np.ndarray,
        log_prob: float,
        reward: float,
        cost: float,
        value_r: float,
        value_c: float,
        done: bool,
    ) -> None:
        if self.full:
            raise IndexError(f"rollout buffer is full ({self.capacity} steps)")
        i = self.size
        self.obs[i] = obs
        self.pre_actions[i] = pre_action
        self.log_probs[i] = log_prob
        self.rewards[i] = reward
        self.costs[i] = cost
        self.values_r[i] = value_r
        self.values_c[i] = value_c
        self.dones[i] = done
        self.size += 1

    def clear(self) -> None:
        self.size = 0


def discounted_advantages(
    rewards: np.ndarray, values: np.ndarray, dones: np.ndarray, gamma: float, lam: float
) -> np.ndarray:
    """
    Backward GAE recursion. A done step is the last one of its episode and
    does not bootstrap; the buffer always ends on a done step.
    """
    n = len(rewards)
    adv = np.zeros(n)
    last = 0.0
    for t in reversed(range(n)):
        nonterminal = 0.0 if dones[t] else 1.0
        next_value = values[t + 1] if t + 1 < n else 0.0
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        last = delta + gamma * lam * nonterminal * last
        adv[t] = last
    return adv


@dataclass
class GaeResult:
    adv_r: np.ndarray
    adv_c: np.ndarray
    ret_r: np.ndarray
    ret_c: np.ndarray


def normalize(x: np.ndarray) -> np.ndarray:
    std = x.std()
    return (x - x.mean()) / (std + 1e-8)


def gae(buf: RolloutBuffer, gamma: float, lam: float, normalize_reward: bool = False) -> GaeResult:
    """
    Advantages and return targets for the reward and cost streams. The
    Lagrangian update normalizes after combining the streams, so the reward
    stream is only normalized here on request.
    """
    n = buf.size
    dones = buf.dones[:n].copy()
    if n:
        dones[-1] = True
    adv_r = discounted_advantages(buf.rewards[:n], buf.values_r[:n], dones, gamma, lam)
    adv_c = discounted_advantages(buf.costs[:n], buf.values_c[:n], dones, gamma, lam)
    ret_r = adv_r + buf.values_r[:n]
    ret_c = adv_c + buf.values_c[:n]
    if normalize_reward:
        adv_r = normalize(adv_r)
    return GaeResult(adv_r=adv_r, adv_c=adv_c, ret_r=ret_r, ret_c=ret_c)
