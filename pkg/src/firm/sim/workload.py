"""Open-loop request arrival generation."""
from __future__ import annotations

import math

import numpy as np

from firm.sim.scenario import WorkloadSpec

US_PER_S = 1_000_000


def generate_arrivals(
    workload: WorkloadSpec, t: int, rng: np.random.Generator, dt_s: float = 1.0
) -> list[tuple[int, str]]:
    """Arrivals for step ``t`` as ``(time_us, request_type)`` in time order.

    The count depends only on the pattern and ``rng``, never on system state.
    """
    if t < 0:
        raise ValueError("step index must be >= 0")
    step_us = int(dt_s * US_PER_S)
    t0 = t * step_us
    if workload.pattern == "constant":
        # integer counts that add up exactly over consecutive steps
        n = math.floor((t + 1) * dt_s * workload.base_rate + 1e-9) - math.floor(t * dt_s * workload.base_rate + 1e-9)
        times = [t0 + (k * step_us) // n for k in range(n)] if n > 0 else []
    else:
        rate = workload.rate(t * dt_s + dt_s / 2)
        n = int(rng.poisson(rate * dt_s))
        times = sorted(int(x) for x in t0 + rng.integers(0, step_us, size=n))
    if not times:
        return []
    names = list(workload.mix)
    probs = np.array([workload.mix[k] for k in names])
    kinds = rng.choice(len(names), size=len(times), p=probs / probs.sum())
    return [(tm, names[k]) for tm, k in zip(times, kinds)]
