"""Per-step telemetry records and their CSV form."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from firm.resources import RESOURCE_NAMES

CSV_HEADER = (
    ["t", "instance"]
    + [f"{r}_util" for r in RESOURCE_NAMES]
    + [f"{r}_limit" for r in RESOURCE_NAMES]
    + ["replicas", "arrival_rate", "p50_us", "p99_us", "dropped"]
)


def nearest_rank(samples, q: float) -> float:
    """Nearest-rank percentile: the ceil(q/100 * n)-th smallest sample."""
    if len(samples) == 0:
        raise ValueError("percentile of an empty sample")
    ordered = np.sort(np.asarray(samples, dtype=float))
    rank = max(1, int(np.ceil(q / 100.0 * len(ordered) - 1e-9)))
    return float(ordered[rank - 1])


@dataclass
class InstanceTelemetry:
    instance_id: str
    service_id: str
    utilization: np.ndarray  # per replica, same units as limits
    limits: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    replicas: int
    offered_rate: float
    latencies: list[int] = field(default_factory=list)  # span durations at this instance
    queue_length: int = 0

    @property
    def util_ratio(self) -> np.ndarray:
        return np.clip(self.utilization / self.limits, 0.0, 1.0)

    def percentile(self, q: float) -> float:
        return nearest_rank(self.latencies, q) if self.latencies else 0.0


@dataclass
class TelemetrySnapshot:
    t: int
    instances: dict[str, InstanceTelemetry]
    arrival_rate: float
    request_mix: dict[str, float]
    latencies: dict[str, list[int]]  # end-to-end latency of requests completed in this step
    dropped_by_type: dict[str, int]
    completed: int = 0
    in_flight: int = 0

    @property
    def dropped(self) -> int:
        return sum(self.dropped_by_type.values())

    def latency_window(self, request_type: str) -> list[float]:
        """Completed latencies plus one +inf per dropped request."""
        return [float(x) for x in self.latencies.get(request_type, [])] + [np.inf] * self.dropped_by_type.get(request_type, 0)

    def drop_rate(self) -> float:
        total = self.completed + self.dropped
        return self.dropped / total if total else 0.0

    def csv_rows(self) -> list[list]:
        rows = []
        for iid, it in self.instances.items():
            rows.append(
                [self.t, iid]
                + [_fmt(x) for x in it.util_ratio]
                + [_fmt(x) for x in it.limits]
                + [it.replicas, _fmt(self.arrival_rate), _fmt(it.percentile(50)), _fmt(it.percentile(99)), self.dropped]
            )
        return rows


def _fmt(x: float) -> str:
    return repr(float(x))


class TelemetryWriter:
    def __init__(self, fh):
        self._w = csv.writer(fh, lineterminator="\n")
        self._w.writerow(CSV_HEADER)

    def write(self, snap: TelemetrySnapshot) -> None:
        self._w.writerows(snap.csv_rows())
