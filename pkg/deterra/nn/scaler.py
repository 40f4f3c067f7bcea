from dataclasses import dataclass

import numpy as np

from ..errors import InsufficientDataError


@dataclass
class Scaler:
    """Per-dimension affine map of the observed [min, max] onto [-1, 1]; constant dims map to 0."""

    lo: np.ndarray
    hi: np.ndarray

    @property
    def span(self) -> np.ndarray:
        return self.hi - self.lo

    def apply(self, x: np.ndarray) -> np.ndarray:
        span = self.span
        const = span == 0.0
        safe = np.where(const, 1.0, span)
        y = 2.0 * (np.asarray(x, dtype=np.float64) - self.lo) / safe - 1.0
        return np.where(const, 0.0, y)

    def invert(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=np.float64) + 1.0) * 0.5 * self.span + self.lo

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Scaler":
        return cls(lo=np.asarray(data["lo"], dtype=np.float64), hi=np.asarray(data["hi"], dtype=np.float64))


def fit_scaler(data: np.ndarray) -> Scaler:
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if data.shape[0] == 0:
        raise InsufficientDataError("cannot fit a scaler on an empty dataset")
    return Scaler(lo=data.min(axis=0), hi=data.max(axis=0))


@dataclass
class Standardizer:
    """Zero mean, unit variance for regression targets."""

    mean: float
    std: float

    @classmethod
    def fit(cls, y: np.ndarray) -> "Standardizer":
        y = np.asarray(y, dtype=np.float64)
        if y.size == 0:
            raise InsufficientDataError("cannot standardize an empty target vector")
        std = float(y.std())
        return cls(mean=float(y.mean()), std=std if std > 0.0 else 1.0)

    def apply(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=np.float64) - self.mean) / self.std

    def invert(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std}

    @classmethod
    def from_dict(cls, data: dict) -> "Standardizer":
        return cls(mean=float(data["mean"]), std=float(data["std"]))
