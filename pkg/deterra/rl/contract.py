"""
The reset/step contract every policy-optimization routine runs against.
The real environment and the virtual CMDP both satisfy it through StateCmdp;
small synthetic CMDPs implement it directly.
"""

from dataclasses import dataclass, field
from typing import Any, Protocol, runtime_checkable

import numpy as np

from ..config import EnvConfig
from ..env.cmdp import CmdpState, StepOutcome, observation


@dataclass
class Transition:
    obs: np.ndarray
    reward: float
    cost: float
    info: dict[str, Any] = field(default_factory=dict)


@runtime_checkable
class Cmdp(Protocol):
    @property
    def obs_dim(self) -> int: ...

    @property
    def action_dim(self) -> int: ...

    @property
    def horizon(self) -> int: ...

    def reset(self, rng: np.random.Generator) -> np.ndarray: ...

    def step(self, action: np.ndarray, rng: np.random.Generator) -> Transition: ...


class StateModel(Protocol):
    """Anything with the env-style reset(rng) -> state, step(state, raw, rng) -> StepOutcome pair."""

    def reset(self, rng: np.random.Generator) -> CmdpState: ...

    def step(self, state: CmdpState, raw: np.ndarray, rng: np.random.Generator) -> StepOutcome: ...


class StateCmdp:
    """Wraps a state model, tracks the current state and exposes scaled observations."""

    def __init__(self, model: StateModel, cfg: EnvConfig):
        self.model = model
        self.cfg = cfg
        self.state: CmdpState | None = None

    @property
    def obs_dim(self) -> int:
        return self.cfg.state_dim

    @property
    def action_dim(self) -> int:
        return self.cfg.action_dim

    @property
    def horizon(self) -> int:
        return self.cfg.horizon

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.state = self.model.reset(rng)
        return observation(self.cfg, self.state)

    def step(self, action: np.ndarray, rng: np.random.Generator) -> Transition:
        if self.state is None:
            raise RuntimeError("step() called before reset()")
        out = self.model.step(self.state, action, rng)
        self.state = out.next_state
        return Transition(
            obs=observation(self.cfg, out.next_state),
            reward=out.reward,
            cost=out.cost_agg,
            info={"cost_per_user": out.cost_per_user, "vio": out.vio, "drop": out.drop, "tx": out.tx},
        )
