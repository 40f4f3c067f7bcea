from dataclasses import dataclass, field

import numpy as np

from .storage import Storage
from .util import store_csv

CURVE_HEADER = ["episode", "reward_mean", "cost_mean", "lambda", "seed"]
SUMMARY_HEADER = ["episode", "reward_mean", "reward_std", "cost_mean", "cost_std", "lambda_mean", "seeds"]
REPORT_HEADER = ["model", "metric", "train", "test"]
EVOLUTION_HEADER = ["episode", "ee_mean", "ee_std", "viol_mean", "viol_std"]


@dataclass
class MetricsRecord:
    phase: str
    seed: int
    episode: int
    values: dict[str, float] = field(default_factory=dict)


class MetricsLog:
    """Append-only record store; episode indices only grow per (phase, seed)."""

    def __init__(self):
        self.records: list[MetricsRecord] = []
        self._last: dict[tuple[str, int], int] = {}

    def append(self, record: MetricsRecord) -> None:
        key = (record.phase, record.seed)
        last = self._last.get(key)
        if last is not None and record.episode <= last:
            raise ValueError(
                f"episode {record.episode} for phase {record.phase} seed {record.seed} does not follow {last}"
            )
        self._last[key] = record.episode
        self.records.append(record)

    def select(self, phase: str, seed: int | None = None) -> list[MetricsRecord]:
        return [r for r in self.records if r.phase == phase and (seed is None or r.seed == seed)]

    def curve_rows(self, phase: str) -> list[tuple]:
        return [
            (r.episode, r.values["reward_mean"], r.values["cost_mean"], r.values["lambda"], r.seed)
            for r in self.select(phase)
        ]

    def summary_rows(self, phase: str) -> list[tuple]:
        """Mean and std across seeds, per episode index."""
        by_episode: dict[int, list[MetricsRecord]] = {}
        for r in self.select(phase):
            by_episode.setdefault(r.episode, []).append(r)
        rows = []
        for ep in sorted(by_episode):
            recs = by_episode[ep]
            reward = np.array([r.values["reward_mean"] for r in recs])
            cost = np.array([r.values["cost_mean"] for r in recs])
            lam = np.array([r.values["lambda"] for r in recs])
            rows.append((ep, reward.mean(), reward.std(), cost.mean(), cost.std(), lam.mean(), len(recs)))
        return rows


def store_curve(storage: Storage, phase: str, log: MetricsLog) -> str:
    key = f"curves/{phase}.csv"
    store_csv(storage, key, CURVE_HEADER, log.curve_rows(phase))
    return key


def store_summary(storage: Storage, phase: str, log: MetricsLog) -> str:
    key = f"curves/{phase}_summary.csv"
    store_csv(storage, key, SUMMARY_HEADER, log.summary_rows(phase))
    return key


def store_report(storage: Storage, rows: list[tuple[str, str, float, float]]) -> str:
    key = "reports/fit_report.csv"
    store_csv(storage, key, REPORT_HEADER, rows)
    return key
