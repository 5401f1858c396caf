"""State encoding, reward and action mapping between the simulator and the agent."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from firm.resources import NUM_RESOURCES, ResourceKind, ResourceLimits
from firm.sim.telemetry import TelemetrySnapshot, nearest_rank

WC_CAP = 10.0
MIX_BINS = 10


class ZeroLimit(ValueError):
    pass


@dataclass(frozen=True)
class RlState:
    sm: float
    wc: float
    rc: float
    ru: np.ndarray

    def vector(self) -> np.ndarray:
        return np.concatenate([[self.sm, self.wc, self.rc], self.ru])


def slo_ratio(telemetry: TelemetrySnapshot, slos: Mapping[str, tuple[float, float]],
              request_types: Iterable[str] | None = None, timeout_factor: float = 10.0) -> float:
    """min over request types of SLO / tail latency, capped at 1.

    Dropped requests count at the timeout, so the ratio never falls below
    1 / timeout_factor.
    """
    ratio = 1.0
    for rt in (request_types if request_types is not None else slos):
        slo, pct = slos[rt]
        window = telemetry.latency_window(rt)
        if not window:
            continue
        tail = min(nearest_rank(window, pct), slo * timeout_factor)
        if tail > 0:
            ratio = min(ratio, slo / tail)
    return ratio


def mix_code(mix: Mapping[str, float], order: Iterable[str]) -> float:
    """Row-major index of the 0.1-binned mix vector, scaled to [0, 1]."""
    bins = [min(MIX_BINS - 1, int(np.floor(mix.get(rt, 0.0) * MIX_BINS + 1e-9))) for rt in order]
    k = len(bins)
    if k == 0:
        return 0.0
    flat = int(np.ravel_multi_index(tuple(bins), (MIX_BINS,) * k))
    return flat / (MIX_BINS**k - 1)


def workload_change(rate: float, prev_rate: float | None) -> float:
    if prev_rate is None:
        return 1.0
    if prev_rate <= 0:
        return 1.0 if rate <= 0 else WC_CAP
    return min(WC_CAP, rate / prev_rate)


def encode_state(telemetry: TelemetrySnapshot, prev: TelemetrySnapshot | None, instance_id: str,
                 slos: Mapping[str, tuple[float, float]], culprit: bool,
                 request_types: Iterable[str] | None = None, timeout_factor: float = 10.0) -> RlState:
    inst = telemetry.instances[instance_id]
    sm = slo_ratio(telemetry, slos, request_types, timeout_factor) if culprit else 1.0
    prev_rate = prev.instances[instance_id].offered_rate if prev is not None else None
    wc = workload_change(inst.offered_rate, prev_rate)
    rc = mix_code(telemetry.request_mix, sorted(slos))
    return RlState(sm, wc, rc, inst.util_ratio.copy())


def reward(sm: float, ru: np.ndarray, rlt_norm: np.ndarray, alpha: float = 0.5) -> float:
    """alpha * sm * |R| + (1 - alpha) * sum_i min(1, ru_i / rlt_i)."""
    ru = np.asarray(ru, dtype=float)
    rlt = np.asarray(rlt_norm, dtype=float)
    if not (np.all(np.isfinite(ru)) and np.all(np.isfinite(rlt)) and np.isfinite(sm)):
        raise ValueError("reward inputs must be finite")
    if np.any(rlt <= 0):
        raise ZeroLimit("limit fraction must be > 0")
    return float(alpha * sm * NUM_RESOURCES + (1.0 - alpha) * np.minimum(1.0, ru / rlt).sum())


@dataclass(frozen=True)
class MappedAction:
    values: np.ndarray
    overflow_high: np.ndarray  # bool per resource: exceeds what the node can give
    overflow_low: np.ndarray  # bool per resource: action pinned at the floor


def map_action(raw: np.ndarray, limits: ResourceLimits, headroom: np.ndarray | None = None,
               threads: int | None = None) -> MappedAction:
    raw = np.clip(np.asarray(raw, dtype=float), -1.0, 1.0)
    lo, hi = limits.lower, limits.upper
    values = lo + (raw + 1.0) / 2.0 * (hi - lo)
    if threads is not None:
        values[ResourceKind.CPU] = max(lo[ResourceKind.CPU], min(values[ResourceKind.CPU], float(threads)))
    if headroom is None:
        high = np.zeros(NUM_RESOURCES, dtype=bool)
    else:
        high = values > np.asarray(headroom, dtype=float) + 1e-12
    return MappedAction(values, high, raw <= -1.0)
