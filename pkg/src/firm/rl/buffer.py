"""Fixed-capacity experience replay."""
from __future__ import annotations

import numpy as np


class InsufficientSamples(ValueError):
    pass


class ReplayBuffer:
    """Ring buffer of (s, a, r, s') rows; the oldest row is overwritten when full."""

    def __init__(self, capacity: int = 100_000, state_dim: int = 8, action_dim: int = 5):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros((capacity, action_dim))
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, state_dim))
        self.size = 0
        self.cursor = 0

    def __len__(self) -> int:
        return self.size

    def add(self, s, a, r: float, s2) -> None:
        s, a, s2 = (np.asarray(v, dtype=float) for v in (s, a, s2))
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(a)) and np.isfinite(r) and np.all(np.isfinite(s2))):
            raise ValueError("transition has non-finite components")
        i = self.cursor
        self.s[i], self.a[i], self.r[i], self.s2[i] = s, a, r, s2
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.size < n:
            raise InsufficientSamples(f"buffer holds {self.size} transitions, batch needs {n}")
        return rng.choice(self.size, size=n, replace=False)

    def sample(self, n: int, rng: np.random.Generator):
        idx = self.sample_indices(n, rng)
        return self.s[idx], self.a[idx], self.r[idx], self.s2[idx]

    def clear(self) -> None:
        self.size = 0
        self.cursor = 0
