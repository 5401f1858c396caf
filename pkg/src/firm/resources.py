"""The five-resource model shared by the simulator, the agent and the controllers."""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np


class ResourceKind(IntEnum):
    CPU = 0
    MEMBW = 1
    LLC = 2
    IO = 3
    NET = 4


NUM_RESOURCES = len(ResourceKind)
RESOURCE_NAMES = ("cpu", "membw", "llc", "io", "net")


def resource_from_name(name: str) -> ResourceKind:
    try:
        return ResourceKind(RESOURCE_NAMES.index(name.lower()))
    except ValueError:
        raise ValueError(f"unknown resource {name!r}; expected one of {RESOURCE_NAMES}") from None


def resource_vector(values=None) -> np.ndarray:
    """A length-5 float64 vector in ``ResourceKind`` order; components must be >= 0."""
    if values is None:
        return np.zeros(NUM_RESOURCES)
    if isinstance(values, dict):
        out = np.zeros(NUM_RESOURCES)
        for k, v in values.items():
            out[resource_from_name(k)] = v
        values = out
    vec = np.asarray(values, dtype=float).copy()
    if vec.shape != (NUM_RESOURCES,):
        raise ValueError(f"resource vector must have {NUM_RESOURCES} components, got shape {vec.shape}")
    if np.any(vec < 0) or not np.all(np.isfinite(vec)):
        raise ValueError(f"resource vector components must be finite and >= 0: {vec}")
    return vec


@dataclass
class ResourceLimits:
    """Current limit plus the [lower, upper] bounds per resource (per replica)."""

    limit: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.limit = resource_vector(self.limit)
        self.lower = resource_vector(self.lower)
        self.upper = resource_vector(self.upper)
        if np.any(self.lower <= 0):
            raise ValueError("lower bounds must be > 0")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")
        if np.any(self.limit < self.lower - 1e-12) or np.any(self.limit > self.upper + 1e-12):
            raise ValueError(f"limit {self.limit} outside bounds [{self.lower}, {self.upper}]")

    def clamp(self, r: int, value: float) -> float:
        return float(min(max(value, self.lower[r]), self.upper[r]))

    def set(self, r: int, value: float) -> float:
        self.limit[r] = self.clamp(r, value)
        return float(self.limit[r])

    def copy(self) -> ResourceLimits:
        return ResourceLimits(self.limit.copy(), self.lower.copy(), self.upper.copy())

    def fraction(self) -> np.ndarray:
        """Position of each limit inside its bound interval, in [0, 1]."""
        span = self.upper - self.lower
        return np.where(span > 0, (self.limit - self.lower) / np.where(span > 0, span, 1.0), 1.0)
