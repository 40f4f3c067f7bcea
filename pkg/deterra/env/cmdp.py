from dataclasses import dataclass

import numpy as np

from ..config import EnvConfig
from ..errors import DimensionError
from ..logs import get_logger
from .channel import (
    ChannelState,
    build_codebook,
    channel_advance,
    channel_reset,
    compute_pbm,
    reference_amplitude,
)
from .phy import RawAction, compute_bits, compute_sinr, decode_action
from .queues import QueueBank, enqueue_arrivals, queue_step

logger = get_logger(__name__)


@dataclass
class CmdpState:
    r: np.ndarray
    q_buf: np.ndarray
    q_urg: np.ndarray

    def vector(self) -> np.ndarray:
        return np.concatenate([self.r, self.q_buf.astype(np.float64), self.q_urg.astype(np.float64)])

    @classmethod
    def from_vector(cls, cfg: EnvConfig, vec: np.ndarray) -> "CmdpState":
        vec = np.asarray(vec, dtype=np.float64).reshape(-1)
        if vec.shape[0] != cfg.state_dim:
            raise DimensionError(f"state has length {vec.shape[0]}, expected {cfg.state_dim}")
        p, U = cfg.pbm_dim, cfg.U
        return cls(
            r=vec[:p].copy(),
            q_buf=np.rint(vec[p : p + U]).astype(np.int64),
            q_urg=np.rint(vec[p + U :]).astype(np.int64),
        )


@dataclass
class StepOutcome:
    next_state: CmdpState
    reward: float
    cost_per_user: np.ndarray
    cost_agg: float
    vio: np.ndarray
    drop: np.ndarray
    tx: np.ndarray
    bits_served: np.ndarray


def observation(cfg: EnvConfig, state: CmdpState) -> np.ndarray:
    """Fixed feature scaling of a state for the policy network."""
    queue_ref = max(cfg.arrival_rate, 1.0) * (cfg.deadline_slots + 1)
    return np.concatenate(
        [
            state.r / reference_amplitude(cfg),
            state.q_buf / queue_ref,
            state.q_urg / queue_ref,
        ]
    )


def slot_cost(vio: np.ndarray, drop: np.ndarray, tx: np.ndarray) -> np.ndarray:
    bad = (vio + drop).astype(np.float64)
    total = bad + tx
    return np.divide(bad, total, out=np.zeros_like(bad), where=total > 0)


class CfMimoEnv:
    """
    The real CMDP: multipath channels, finite-blocklength service and
    deadline-aware FIFO queues. One instance is single-threaded.
    """

    def __init__(self, cfg: EnvConfig):
        cfg.validate()
        self.cfg = cfg
        self.codebook = build_codebook(cfg.M)
        self.channel: ChannelState | None = None
        self.bank: QueueBank | None = None
        self.state: CmdpState | None = None
        self.arrived = np.zeros(cfg.U, dtype=np.int64)
        self.reset_drops = np.zeros(cfg.U, dtype=np.int64)

    @property
    def state_dim(self) -> int:
        return self.cfg.state_dim

    @property
    def action_dim(self) -> int:
        return self.cfg.action_dim

    @property
    def horizon(self) -> int:
        return self.cfg.horizon

    def _assemble(self) -> CmdpState:
        assert self.channel is not None and self.bank is not None
        return CmdpState(
            r=compute_pbm(self.cfg, self.channel, self.codebook),
            q_buf=self.bank.buffered(),
            q_urg=self.bank.urgent(self.cfg.deadline_slots),
        )

    def reset(self, rng: np.random.Generator) -> CmdpState:
        cfg = self.cfg
        self.channel = channel_reset(cfg, rng)
        self.bank = QueueBank.empty(cfg.U)
        self.arrived = np.zeros(cfg.U, dtype=np.int64)
        self.reset_drops = np.zeros(cfg.U, dtype=np.int64)
        for u, queue in enumerate(self.bank.queues):
            # one slot of arrivals stamped just before slot 0
            self.arrived[u], self.reset_drops[u] = enqueue_arrivals(cfg, queue, -1, rng)
        self.state = self._assemble()
        return self.state

    def step(self, state: CmdpState, raw: RawAction | np.ndarray, rng: np.random.Generator) -> StepOutcome:
        cfg = self.cfg
        if self.state is None or self.channel is None or self.bank is None:
            raise RuntimeError("step() called before reset()")
        if state is not self.state and not (
            np.array_equal(state.r, self.state.r)
            and np.array_equal(state.q_buf, self.state.q_buf)
            and np.array_equal(state.q_urg, self.state.q_urg)
        ):
            raise DimensionError("state passed to step() does not match the environment state")
        if not isinstance(raw, RawAction):
            raw = RawAction.from_vector(cfg, raw)

        act = decode_action(cfg, raw)
        gamma = compute_sinr(cfg, self.channel, act, self.codebook)
        psi = compute_bits(cfg, gamma)
        result = queue_step(cfg, self.bank, psi, rng)
        self.arrived += result.arrivals
        self.channel = channel_advance(cfg, self.channel, rng)
        self.state = self._assemble()

        energy = act.energy(cfg.slot_seconds)
        reward = float(np.sum(psi) / energy) if energy > 0.0 else 0.0
        cost = slot_cost(result.vio, result.drop, result.tx)
        return StepOutcome(
            next_state=self.state,
            reward=reward,
            cost_per_user=cost,
            cost_agg=float(cost.mean()),
            vio=result.vio,
            drop=result.drop,
            tx=result.tx,
            bits_served=result.served_bits,
        )
