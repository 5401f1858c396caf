"""Performance-anomaly campaigns: scheduling, effect channels and ground truth."""
from __future__ import annotations

import bisect
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from firm.resources import NUM_RESOURCES, ResourceKind

US_PER_S = 1_000_000
PULSE_PERIOD_US = 2 * US_PER_S


class AnomalyType(Enum):
    WORKLOAD_VARIATION = "workload_variation"
    NETWORK_DELAY = "network_delay"
    CPU_UTIL = "cpu_util"
    LLC_BW_CAP = "llc_bw_cap"
    MEM_BW = "mem_bw"
    IO_BW = "io_bw"
    NET_BW = "net_bw"

    @property
    def resource(self) -> ResourceKind | None:
        """The resource whose availability this anomaly squeezes, if any."""
        return _PRESSURE_CHANNEL.get(self)


_PRESSURE_CHANNEL = {
    AnomalyType.CPU_UTIL: ResourceKind.CPU,
    AnomalyType.MEM_BW: ResourceKind.MEMBW,
    AnomalyType.LLC_BW_CAP: ResourceKind.LLC,
    AnomalyType.IO_BW: ResourceKind.IO,
    AnomalyType.NET_BW: ResourceKind.NET,
}


class Pattern(Enum):
    CONSTANT = "constant"
    RAMP = "ramp"
    PULSE = "pulse"


@dataclass(frozen=True)
class AnomalyInjection:
    target_instance: str
    type: AnomalyType
    intensity: float
    start: int
    duration: int
    pattern: Pattern = Pattern.CONSTANT

    def __post_init__(self):
        if not 0.0 <= self.intensity <= 1.0:
            raise ValueError(f"intensity must be in [0, 1], got {self.intensity}")
        if self.duration <= 0:
            raise ValueError(f"duration must be > 0, got {self.duration}")
        if self.start < 0:
            raise ValueError(f"start must be >= 0, got {self.start}")

    @property
    def end(self) -> int:
        return self.start + self.duration

    def active(self, t: int) -> bool:
        return self.start <= t < self.end

    def level(self, t: int) -> float:
        """Pattern-shaped intensity at time ``t`` (0 outside the injection window)."""
        if not self.active(t):
            return 0.0
        if self.pattern is Pattern.CONSTANT:
            return self.intensity
        if self.pattern is Pattern.RAMP:
            return self.intensity * (t - self.start) / self.duration
        on = ((t - self.start) % PULSE_PERIOD_US) < PULSE_PERIOD_US // 2
        return self.intensity if on else 0.0

    def to_record(self) -> dict:
        return {
            "target_instance": self.target_instance,
            "type": self.type.value,
            "intensity": self.intensity,
            "start": self.start,
            "duration": self.duration,
            "pattern": self.pattern.value,
        }

    @classmethod
    def from_record(cls, rec: dict) -> AnomalyInjection:
        return cls(
            target_instance=str(rec["target_instance"]),
            type=AnomalyType(rec["type"]),
            intensity=float(rec["intensity"]),
            start=int(rec["start"]),
            duration=int(rec["duration"]),
            pattern=Pattern(rec.get("pattern", "constant")),
        )


@dataclass(frozen=True)
class ChannelConstants:
    """Intensity to effect mappings; the physical tools are not modelled."""

    saturation: float = 0.95
    workload_gain: float = 4.0  # rate multiplier is 1 + gain * intensity
    delay_us_per_intensity: float = 50_000.0
    delay_sigma_fraction: float = 0.2


@dataclass(frozen=True)
class CampaignParams:
    rate_per_s: float = 0.33
    types: tuple[AnomalyType, ...] = tuple(AnomalyType)
    intensity_range: tuple[float, float] = (0.0, 1.0)
    duration_range_s: tuple[float, float] = (5.0, 15.0)
    patterns: tuple[Pattern, ...] = (Pattern.CONSTANT,)
    # "multi": injections may overlap; "single": the next one starts only after the previous ends
    mode: str = "multi"
    channels: ChannelConstants = field(default_factory=ChannelConstants)

    @classmethod
    def from_dict(cls, d: dict | None) -> CampaignParams:
        d = dict(d or {})
        kw = {}
        if "rate_per_s" in d:
            kw["rate_per_s"] = float(d["rate_per_s"])
        if "types" in d:
            kw["types"] = tuple(AnomalyType(t) for t in d["types"])
        if "intensity_range" in d:
            kw["intensity_range"] = tuple(float(x) for x in d["intensity_range"])
        if "duration_range_s" in d:
            kw["duration_range_s"] = tuple(float(x) for x in d["duration_range_s"])
        if "patterns" in d:
            kw["patterns"] = tuple(Pattern(p) for p in d["patterns"])
        if "mode" in d:
            if d["mode"] not in ("multi", "single"):
                raise ValueError(f"campaign mode must be 'multi' or 'single', got {d['mode']!r}")
            kw["mode"] = d["mode"]
        if "channels" in d:
            kw["channels"] = ChannelConstants(**d["channels"])
        return cls(**kw)


@dataclass
class Campaign:
    seed: int
    injections: list[AnomalyInjection]
    params: CampaignParams = field(default_factory=CampaignParams)

    def __post_init__(self):
        self.injections = sorted(self.injections, key=lambda i: (i.start, i.target_instance, i.type.value))
        self._starts = [i.start for i in self.injections]
        self._max_duration = max((i.duration for i in self.injections), default=0)

    def active_at(self, t: int) -> list[AnomalyInjection]:
        hi = bisect.bisect_right(self._starts, t)
        lo = bisect.bisect_left(self._starts, t - self._max_duration)
        return [i for i in self.injections[lo:hi] if i.active(t)]

    def targets_at(self, t: int) -> set[str]:
        """Ground truth: instances under any active injection at ``t``."""
        return {i.target_instance for i in self.active_at(t)}

    def pressure_vector(self, instance: str, t: int, active: Sequence[AnomalyInjection] | None = None) -> np.ndarray:
        out = np.zeros(NUM_RESOURCES)
        for inj in self.active_at(t) if active is None else active:
            r = inj.type.resource
            if r is not None and inj.target_instance == instance:
                out[r] += inj.level(t)
        return np.minimum(out, self.params.channels.saturation)

    def _summed_level(self, instance: str, kind: AnomalyType, t: int, active) -> float:
        total = sum(i.level(t) for i in (self.active_at(t) if active is None else active)
                    if i.type is kind and i.target_instance == instance)
        return min(total, 1.0)

    def workload_multiplier(self, instance: str, t: int, active=None) -> float:
        lvl = self._summed_level(instance, AnomalyType.WORKLOAD_VARIATION, t, active)
        return 1.0 + self.params.channels.workload_gain * lvl

    def network_delay(self, instance: str, t: int, active=None) -> tuple[float, float]:
        """(mean, std) in µs of the extra delay added to each call into ``instance``."""
        mu = self._summed_level(instance, AnomalyType.NETWORK_DELAY, t, active) * self.params.channels.delay_us_per_intensity
        return mu, mu * self.params.channels.delay_sigma_fraction

    def to_json(self) -> str:
        return json.dumps([i.to_record() for i in self.injections], indent=1)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path: str | Path, params: CampaignParams | None = None, seed: int = 0) -> Campaign:
        records = json.loads(Path(path).read_text())
        if not isinstance(records, list):
            raise ValueError(f"{path}: campaign file must hold a JSON list of injections")
        return cls(seed, [AnomalyInjection.from_record(r) for r in records], params or CampaignParams())


def empty_campaign(params: CampaignParams | None = None) -> Campaign:
    return Campaign(0, [], params or CampaignParams())


def pressure(campaign: Campaign, instance: str, resource: ResourceKind, t: int) -> float:
    return float(campaign.pressure_vector(instance, t)[int(resource)])


def schedule_campaign(
    params: CampaignParams,
    horizon: int,
    targets: Sequence[str],
    rng: np.random.Generator,
    seed: int = 0,
    start_offset: int = 0,
) -> Campaign:
    """Draw a campaign over ``[start_offset, horizon)`` µs.

    Gaps are exponential with rate ``params.rate_per_s``; type, target,
    intensity, duration and pattern are uniform over their configured sets.
    """
    if horizon <= 0:
        raise ValueError("horizon must be > 0")
    if not targets:
        raise ValueError("targets must be non-empty")
    if params.rate_per_s <= 0:
        raise ValueError("injection rate must be > 0")
    lo, hi = params.intensity_range
    dlo, dhi = params.duration_range_s
    injections = []
    t = start_offset
    while True:
        gap = int(round(rng.exponential(1.0 / params.rate_per_s) * US_PER_S))
        start = t + gap
        if start >= horizon:
            break
        kind = params.types[int(rng.integers(len(params.types)))]
        target = targets[int(rng.integers(len(targets)))]
        intensity = float(rng.uniform(lo, hi))
        duration = max(1, int(round(rng.uniform(dlo, dhi) * US_PER_S)))
        pattern = params.patterns[int(rng.integers(len(params.patterns)))]
        injections.append(AnomalyInjection(target, kind, intensity, start, duration, pattern))
        t = start + duration if params.mode == "single" else start
    return Campaign(seed, injections, params)
