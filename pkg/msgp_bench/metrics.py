import statistics
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .datasets import FlightLog


@dataclass
class AxisScores:
    x: float
    y: float
    z: float

    def as_dict(self) -> dict:
        return asdict(self)

    def values(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z)


def _nmse(errors: np.ndarray, reference: np.ndarray) -> float | None:
    spread = float(np.sum((reference - reference.mean()) ** 2))
    if spread == 0.0:
        return None
    return float(np.sum(errors**2)) / spread


def tracking_nmse(log: FlightLog, transient_s: float = 2.0) -> AxisScores | None:
    """Per-axis position error energy normalized by the reference variation.

    Samples before ``t0 + transient_s`` are dropped. Returns None when nothing
    is left to score.
    """
    if len(log) == 0:
        return None
    keep = log.t >= log.t[0] + transient_s
    if not np.any(keep):
        return None
    errors = log.r[keep] - log.r_d[keep]
    reference = log.r_d[keep]
    scores = []
    for axis in range(3):
        value = _nmse(errors[:, axis], reference[:, axis])
        # a constant reference axis is scored by its raw mean squared error
        scores.append(value if value is not None else float(np.mean(errors[:, axis] ** 2)))
    return AxisScores(*scores)


def prediction_nmse(
    targets: np.ndarray, predictions: np.ndarray, channels: Sequence[str]
) -> dict[str, float | None]:
    targets = np.asarray(targets, dtype=float)
    predictions = np.asarray(predictions, dtype=float)
    return {
        name: _nmse(predictions[:, k] - targets[:, k], targets[:, k])
        for k, name in enumerate(channels)
    }


def latency_stats(samples: Sequence[float]) -> dict:
    """Summary of per-query latencies given in seconds; reported in milliseconds."""
    if not samples:
        return {}
    values = [s * 1000.0 for s in samples]
    return {
        "latency_ms_mean": statistics.mean(values),
        "latency_ms_median": statistics.median(values),
        "latency_ms_min": min(values),
        "latency_ms_max": max(values),
        "queries": len(values),
    }
