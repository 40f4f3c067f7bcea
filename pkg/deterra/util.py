import base64
import csv
import json
from typing import Any, Iterable, Sequence

import numpy as np

from .storage import Storage, scratch_path


def save_json(filename: str, data: dict):
    """
    Save a dictionary to a JSON file.
    """
    with open(filename, "w") as f:
        json.dump(data, f, indent=4, sort_keys=True)


def load_json(filename: str) -> dict:
    with open(filename, "r") as f:
        return json.load(f)


def store_json(storage: Storage, key: str, data: dict) -> None:
    tmp = scratch_path(key)
    save_json(tmp, data)
    storage.save(tmp, key)


def save_csv(filename: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with open(filename, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_csv_cell(v) for v in row])


def store_csv(
    storage: Storage, key: str, header: Sequence[str], rows: Iterable[Sequence[Any]]
) -> None:
    tmp = scratch_path(key)
    save_csv(tmp, header, rows)
    storage.save(tmp, key)


def _csv_cell(v: Any) -> Any:
    # repr keeps every float digit so reruns compare byte for byte
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def encode_floats(values: np.ndarray) -> str:
    """Base64 of the little-endian float64 bytes."""
    return base64.b64encode(np.ascontiguousarray(values, dtype="<f8").tobytes()).decode("ascii")


def decode_floats(payload: str) -> np.ndarray:
    return np.frombuffer(base64.b64decode(payload), dtype="<f8").astype(np.float64)
