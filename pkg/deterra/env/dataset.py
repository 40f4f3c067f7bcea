"""
Offline transition-tuple files.

Binary layout: 8-byte magic, five little-endian uint64 (state_dim,
action_dim, users, count, episode_length), 16 ASCII bytes of env hash, then
`count` records of little-endian float64:
(s_t, a_t, r_t, c_agg_t, c_per_user, s_{t+1}).
"""

from dataclasses import dataclass

import numpy as np

from ..errors import ArtifactError, DimensionError
from ..util import save_csv

MAGIC = b"DTRTUPL1"
HEADER_BYTES = len(MAGIC) + 5 * 8 + 16


@dataclass
class TransitionDataset:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    costs: np.ndarray
    cost_per_user: np.ndarray
    next_states: np.ndarray
    episode_length: int
    env_hash: str

    def __post_init__(self):
        n = self.states.shape[0]
        for name in ("actions", "rewards", "costs", "cost_per_user", "next_states"):
            if getattr(self, name).shape[0] != n:
                raise DimensionError(f"{name} has {getattr(self, name).shape[0]} rows, expected {n}")
        if len(self.env_hash) != 16:
            raise ArtifactError(f"env hash must be 16 characters, got {self.env_hash!r}")

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def action_dim(self) -> int:
        return self.actions.shape[1]

    @property
    def users(self) -> int:
        return self.cost_per_user.shape[1]

    def record_matrix(self) -> np.ndarray:
        return np.hstack(
            [
                self.states,
                self.actions,
                self.rewards[:, None],
                self.costs[:, None],
                self.cost_per_user,
                self.next_states,
            ]
        )

    def initial_states(self) -> np.ndarray:
        """States that open an episode (every episode_length-th record)."""
        return self.states[:: self.episode_length]


def write_dataset(path: str, ds: TransitionDataset) -> None:
    header = np.array(
        [ds.state_dim, ds.action_dim, ds.users, len(ds), ds.episode_length], dtype="<u8"
    )
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(header.tobytes())
        f.write(ds.env_hash.encode("ascii"))
        f.write(np.ascontiguousarray(ds.record_matrix(), dtype="<f8").tobytes())


def read_dataset(path: str, expected_hash: str | None = None) -> TransitionDataset:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < HEADER_BYTES or blob[: len(MAGIC)] != MAGIC:
        raise ArtifactError(f"{path} is not a transition dataset")
    S, A, U, count, episode_length = (
        int(v) for v in np.frombuffer(blob, dtype="<u8", count=5, offset=len(MAGIC))
    )
    env_hash = blob[len(MAGIC) + 40 : HEADER_BYTES].decode("ascii")
    if expected_hash is not None and env_hash != expected_hash:
        raise ArtifactError(
            f"{path} was collected for env hash {env_hash}, config hash is {expected_hash}"
        )
    width = 2 * S + A + 2 + U
    body = blob[HEADER_BYTES:]
    if len(body) != count * width * 8:
        raise ArtifactError(f"{path} is truncated: expected {count} records of width {width}")
    rec = np.frombuffer(body, dtype="<f8").reshape(count, width).astype(np.float64)
    return TransitionDataset(
        states=rec[:, :S],
        actions=rec[:, S : S + A],
        rewards=rec[:, S + A],
        costs=rec[:, S + A + 1],
        cost_per_user=rec[:, S + A + 2 : S + A + 2 + U],
        next_states=rec[:, S + A + 2 + U :],
        episode_length=episode_length,
        env_hash=env_hash,
    )


def csv_header(state_dim: int, action_dim: int) -> list[str]:
    return (
        [f"s_{i}" for i in range(state_dim)]
        + [f"a_{i}" for i in range(action_dim)]
        + ["reward", "cost"]
        + [f"sp_{i}" for i in range(state_dim)]
    )


def export_csv(path: str, ds: TransitionDataset) -> None:
    rows = (
        np.concatenate([ds.states[i], ds.actions[i], [ds.rewards[i], ds.costs[i]], ds.next_states[i]])
        for i in range(len(ds))
    )
    save_csv(path, csv_header(ds.state_dim, ds.action_dim), rows)
