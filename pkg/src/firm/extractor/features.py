"""SLO-violation detection and per-instance features (relative importance, congestion intensity)."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from firm.sim.telemetry import nearest_rank


class EmptyWindow(ValueError):
    pass


class DegenerateVariance(ValueError):
    pass


class InsufficientSamples(ValueError):
    pass


RI_MODES = ("pcc", "variance_explained")


def detect_slo_violation(window: Sequence[float], slo: float, percentile: float = 99.0) -> bool:
    """True iff the ``percentile`` of the latency window exceeds ``slo``."""
    if len(window) == 0:
        raise EmptyWindow("latency window is empty")
    return nearest_rank(window, percentile) > slo


def relative_importance(t_i: Sequence[float], t_cp: Sequence[float], mode: str = "pcc") -> float:
    """Correlation of an instance's latency with the path latency.

    ``pcc`` is Pearson's r; ``variance_explained`` is cov(T_i, T_cp) / var(T_cp),
    which sums to one over a decomposition T_cp = sum_i T_i.
    """
    if mode not in RI_MODES:
        raise ValueError(f"unknown RI mode {mode!r}")
    x = np.asarray(t_i, dtype=float)
    y = np.asarray(t_cp, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("latency series must be 1-D and of equal length")
    if len(x) < 2:
        raise InsufficientSamples("need at least 2 paired samples")
    dx = x - x.mean()
    dy = y - y.mean()
    syy = float(dy @ dy)
    if syy == 0.0:
        raise DegenerateVariance("path latency has zero variance")
    sxy = float(dx @ dy)
    if mode == "variance_explained":
        return sxy / syy
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise DegenerateVariance("instance latency has zero variance")
    return float(np.clip(sxy / np.sqrt(sxx * syy), -1.0, 1.0))


def congestion_intensity(samples: Sequence[float]) -> float:
    """p99 / p50 of the samples, both nearest-rank."""
    if len(samples) < 2:
        raise InsufficientSamples("need at least 2 latency samples")
    arr = np.asarray(samples, dtype=float)
    if np.any(arr <= 0):
        raise ValueError("latency samples must be > 0")
    return nearest_rank(arr, 99) / nearest_rank(arr, 50)
