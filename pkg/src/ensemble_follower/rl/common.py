from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..errors import TrainingError
from ..neural import Normalizer

LOG_COLUMNS = ("step", "episode", "cumulative_reward", "loss", "policy_loss", "value_loss",
               "entropy", "epsilon", "lr")


def fit_normalizer(events) -> Normalizer:
    return Normalizer.fit(np.concatenate([ev.states() for ev in events]))


def linear_schedule(start: float, end: float, horizon: float):
    """``start`` at step 0, ``end`` from ``horizon`` onward."""
    def value(step):
        if horizon <= 0:
            return end
        frac = min(max(step / horizon, 0.0), 1.0)
        return end if frac >= 1.0 else start + frac * (end - start)
    return value


def check_finite(value, what: str, **context):
    if not np.all(np.isfinite(value)):
        details = ", ".join(f"{k}={v}" for k, v in context.items())
        raise TrainingError(f"non-finite {what}" + (f" ({details})" if details else ""))


class TrainingLog:
    """Rows of training progress, one per finished episode or update phase."""

    def __init__(self):
        self.rows: list[dict] = []

    def add(self, **row):
        self.rows.append({k: row.get(k, "") for k in LOG_COLUMNS})

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows if r[name] != ""], dtype=float)

    def episode_returns(self) -> np.ndarray:
        return self.column("cumulative_reward")

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS, lineterminator="\n")
            writer.writeheader()
            for row in self.rows:
                writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        return path


def moving_average(values, window: int = 100) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if len(values) == 0:
        return values
    window = max(1, min(window, len(values)))
    kernel = np.ones(window) / window
    return np.convolve(values, kernel, mode="valid")
