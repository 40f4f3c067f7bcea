"""
Per-UE packet buffers served first-in-first-out.

A packet that arrives while slot t is processed carries arrival_slot = t and
can first be served in slot t + 1. Served in slot s its delay is
s - arrival_slot; once s + 1 - arrival_slot exceeds the deadline it is
removed and counted as violated.
"""

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ..config import EnvConfig


@dataclass
class Packet:
    arrival_slot: int
    size_bits: int
    remaining_bits: float


@dataclass
class UeQueue:
    fifo: deque = field(default_factory=deque)

    @property
    def total_bits(self) -> float:
        return float(sum(p.remaining_bits for p in self.fifo))

    def __len__(self) -> int:
        return len(self.fifo)


@dataclass
class QueueBank:
    queues: list[UeQueue]
    slot: int = 0

    @classmethod
    def empty(cls, users: int) -> "QueueBank":
        return cls(queues=[UeQueue() for _ in range(users)], slot=0)

    def buffered(self) -> np.ndarray:
        return np.array([len(q) for q in self.queues], dtype=np.int64)

    def urgent(self, deadline: int) -> np.ndarray:
        """Packets in their last service opportunity before the deadline."""
        return np.array(
            [sum(1 for p in q.fifo if self.slot - p.arrival_slot >= deadline) for q in self.queues],
            dtype=np.int64,
        )


@dataclass
class QueueStepResult:
    tx: np.ndarray
    vio: np.ndarray
    drop: np.ndarray
    arrivals: np.ndarray
    served_bits: np.ndarray
    delays: list[list[int]]


def enqueue_arrivals(
    cfg: EnvConfig, queue: UeQueue, slot: int, rng: np.random.Generator
) -> tuple[int, int]:
    """Draw one slot of Poisson arrivals; returns (arrived, dropped)."""
    count = int(rng.poisson(cfg.arrival_rate))
    if count == 0:
        return 0, 0
    sizes = rng.integers(cfg.packet_bits_min, cfg.packet_bits_max + 1, size=count)
    total = queue.total_bits
    for i, size in enumerate(sizes):
        if total + size > cfg.buffer_bits:
            return count, count - i
        queue.fifo.append(Packet(arrival_slot=slot, size_bits=int(size), remaining_bits=float(size)))
        total += size
    return count, 0


def queue_step(
    cfg: EnvConfig, bank: QueueBank, psi: np.ndarray, rng: np.random.Generator
) -> QueueStepResult:
    """Serve, expire, then admit new arrivals for the current slot; advances bank.slot."""
    U = len(bank.queues)
    tx = np.zeros(U, dtype=np.int64)
    vio = np.zeros(U, dtype=np.int64)
    drop = np.zeros(U, dtype=np.int64)
    arrivals = np.zeros(U, dtype=np.int64)
    served = np.zeros(U, dtype=np.float64)
    delays: list[list[int]] = [[] for _ in range(U)]
    t = bank.slot

    for u, queue in enumerate(bank.queues):
        budget = float(psi[u])
        while queue.fifo and budget > 0.0:
            head = queue.fifo[0]
            take = min(budget, head.remaining_bits)
            head.remaining_bits -= take
            budget -= take
            served[u] += take
            if head.remaining_bits <= 0.0:
                queue.fifo.popleft()
                tx[u] += 1
                delays[u].append(t - head.arrival_slot)

        kept = deque(p for p in queue.fifo if t + 1 - p.arrival_slot <= cfg.deadline_slots)
        vio[u] = len(queue.fifo) - len(kept)
        queue.fifo = kept

        arrivals[u], drop[u] = enqueue_arrivals(cfg, queue, t, rng)

    bank.slot = t + 1
    return QueueStepResult(tx=tx, vio=vio, drop=drop, arrivals=arrivals, served_bits=served, delays=delays)
