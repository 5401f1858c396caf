"""Scenario configuration: services, call DAGs, demands, SLOs, workload and bounds."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources as importlib_resources
from pathlib import Path

import numpy as np

from firm.resources import NUM_RESOURCES, RESOURCE_NAMES, resource_vector


class ConfigError(ValueError):
    """Invalid scenario or experiment configuration; ``where`` names the field or line."""

    def __init__(self, where: str, message: str):
        super().__init__(f"{where}: {message}")
        self.where = where


CALL_KINDS = ("sequential", "parallel", "background")


@dataclass(frozen=True)
class Call:
    service: str
    kind: str  # sequential | parallel | background
    group: str | None = None  # parallel-group tag


@dataclass(frozen=True)
class Handler:
    """How one service processes one request type."""

    base_service_time: float  # µs
    demand: np.ndarray  # per-replica resource use per 1 req/s
    calls: tuple[Call, ...] = ()

    def stages(self) -> list[tuple[str, tuple[str, ...]]]:
        """Group calls into dispatch stages: ('call'|'group'|'background', services)."""
        out: list[tuple[str, tuple[str, ...]]] = []
        i = 0
        while i < len(self.calls):
            c = self.calls[i]
            if c.kind == "parallel":
                members = [c.service]
                j = i + 1
                while j < len(self.calls) and self.calls[j].kind == "parallel" and self.calls[j].group == c.group:
                    members.append(self.calls[j].service)
                    j += 1
                out.append(("group", tuple(members)))
                i = j
                continue
            out.append(("background" if c.kind == "background" else "call", (c.service,)))
            i += 1
        return out


@dataclass(frozen=True)
class ServiceSpec:
    service_id: str
    handlers: dict[str, Handler]
    threads: int = 4
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    initial: np.ndarray | None = None


@dataclass(frozen=True)
class RequestTypeSpec:
    name: str
    entry: str
    slo_us: float
    percentile: float = 99.0


@dataclass(frozen=True)
class WorkloadSpec:
    pattern: str  # constant | poisson | diurnal | spike
    base_rate: float
    mix: dict[str, float]
    amplitude: float = 0.5
    period_s: float = 60.0
    spikes: tuple[tuple[float, float, float], ...] = ()  # (start_s, duration_s, multiplier)

    def __post_init__(self):
        if self.pattern not in ("constant", "poisson", "diurnal", "spike"):
            raise ConfigError("workload.pattern", f"unknown pattern {self.pattern!r}")
        if self.base_rate < 0:
            raise ConfigError("workload.base_rate", "must be >= 0")
        total = sum(self.mix.values())
        if abs(total - 1.0) > 1e-9:
            raise ConfigError("workload.mix", f"fractions sum to {total}, expected 1")
        if any(v < 0 for v in self.mix.values()):
            raise ConfigError("workload.mix", "fractions must be >= 0")

    def rate(self, t: float) -> float:
        """Instantaneous arrival rate (req/s) at ``t`` seconds."""
        if self.pattern == "diurnal":
            return max(0.0, self.base_rate * (1.0 + self.amplitude * math.sin(2 * math.pi * t / self.period_s)))
        if self.pattern == "spike":
            mult = 1.0
            for start, dur, m in self.spikes:
                if start <= t < start + dur:
                    mult = max(mult, m)
            return self.base_rate * mult
        return self.base_rate


@dataclass
class Scenario:
    name: str
    services: dict[str, ServiceSpec]
    request_types: dict[str, RequestTypeSpec]
    workload: WorkloadSpec
    nodes: int = 3
    node_capacity: np.ndarray = field(default_factory=lambda: np.array([8.0, 1.0, 1.0, 1.0, 1.0]))
    lower: np.ndarray = field(default_factory=lambda: np.array([0.25, 0.05, 0.05, 0.05, 0.05]))
    upper: np.ndarray = field(default_factory=lambda: np.array([4.0, 1.0, 1.0, 1.0, 1.0]))
    initial: np.ndarray | None = None
    timeout_factor: float = 10.0
    service_cv: float = 0.25
    rpc_latency_us: int = 0
    warm_pool: bool = True
    max_replicas: int = 8
    raw: dict = field(default_factory=dict)

    def bounds_for(self, service_id: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        spec = self.services[service_id]
        lo = self.lower if spec.lower is None else spec.lower
        hi = self.upper if spec.upper is None else spec.upper
        if spec.initial is not None:
            init = spec.initial
        elif self.initial is not None:
            init = self.initial
        else:
            init = hi
        return lo.copy(), hi.copy(), np.clip(init, lo, hi)

    def timeout_us(self, request_type: str) -> float:
        return self.timeout_factor * self.request_types[request_type].slo_us

    def instance_id(self, service_id: str) -> str:
        return f"{service_id}-0"

    @property
    def instance_ids(self) -> list[str]:
        return [self.instance_id(s) for s in self.services]

    def visit_multiplicity(self) -> dict[str, dict[str, int]]:
        """Visits per request to each service, including background calls."""
        out: dict[str, dict[str, int]] = {}
        for rt, spec in self.request_types.items():
            counts: dict[str, int] = {}
            stack = [spec.entry]
            while stack:
                svc = stack.pop()
                counts[svc] = counts.get(svc, 0) + 1
                handler = self.services[svc].handlers.get(rt)
                if handler:
                    stack.extend(c.service for c in handler.calls)
            out[rt] = counts
        return out

    @property
    def slos(self) -> dict[str, tuple[float, float]]:
        return {rt: (spec.slo_us, spec.percentile) for rt, spec in self.request_types.items()}

    def serves(self) -> dict[str, list[str]]:
        """Service -> request types whose requests visit it."""
        out: dict[str, list[str]] = {sid: [] for sid in self.services}
        for rt, counts in self.visit_multiplicity().items():
            for sid in counts:
                out[sid].append(rt)
        return {sid: sorted(rts) for sid, rts in out.items()}

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()[:16]


def _vec(value, where: str) -> np.ndarray:
    try:
        if isinstance(value, dict):
            unknown = set(value) - set(RESOURCE_NAMES)
            if unknown:
                raise ValueError(f"unknown resources {sorted(unknown)}")
        return resource_vector(value)
    except (ValueError, TypeError) as exc:
        raise ConfigError(where, str(exc)) from None


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigError(f"{where}.{key}" if where else key, "missing required field")
    return d[key]


def _parse_calls(calls, where: str) -> tuple[Call, ...]:
    out = []
    for i, c in enumerate(calls):
        w = f"{where}[{i}]"
        if isinstance(c, str):
            c = {"service": c, "kind": "sequential"}
        if not isinstance(c, dict):
            raise ConfigError(w, "call must be an object or a service name")
        kind = c.get("kind", "sequential")
        if kind not in CALL_KINDS:
            raise ConfigError(f"{w}.kind", f"expected one of {CALL_KINDS}, got {kind!r}")
        group = c.get("group")
        if kind == "parallel" and group is None:
            raise ConfigError(f"{w}.group", "parallel calls need a group tag")
        out.append(Call(str(_require(c, "service", w)), kind, None if group is None else str(group)))
    return tuple(out)


def parse_scenario(d: dict) -> Scenario:
    if not isinstance(d, dict):
        raise ConfigError("<root>", "scenario must be a JSON object")
    services: dict[str, ServiceSpec] = {}
    for sid, sd in _require(d, "services", "").items():
        w = f"services.{sid}"
        handlers = {}
        for rt, hd in _require(sd, "handlers", w).items():
            hw = f"{w}.handlers.{rt}"
            st = float(_require(hd, "service_time_us", hw))
            if not st > 0:
                raise ConfigError(f"{hw}.service_time_us", "must be > 0")
            handlers[rt] = Handler(st, _vec(hd.get("demand", {}), f"{hw}.demand"), _parse_calls(hd.get("calls", []), f"{hw}.calls"))
        services[sid] = ServiceSpec(
            sid,
            handlers,
            int(sd.get("threads", 4)),
            None if "lower" not in sd else _vec(sd["lower"], f"{w}.lower"),
            None if "upper" not in sd else _vec(sd["upper"], f"{w}.upper"),
            None if "initial" not in sd else _vec(sd["initial"], f"{w}.initial"),
        )
    rts = {}
    for name, rd in _require(d, "request_types", "").items():
        w = f"request_types.{name}"
        entry = str(_require(rd, "entry", w))
        if entry not in services:
            raise ConfigError(f"{w}.entry", f"unknown service {entry!r}")
        slo = float(_require(rd, "slo_us", w))
        if not slo > 0:
            raise ConfigError(f"{w}.slo_us", "must be > 0")
        rts[name] = RequestTypeSpec(name, entry, slo, float(rd.get("percentile", 99.0)))
    wd = _require(d, "workload", "")
    mix = {str(k): float(v) for k, v in _require(wd, "mix", "workload").items()}
    for rt in mix:
        if rt not in rts:
            raise ConfigError("workload.mix", f"unknown request type {rt!r}")
    workload = WorkloadSpec(
        pattern=str(wd.get("pattern", "poisson")),
        base_rate=float(_require(wd, "base_rate", "workload")),
        mix=mix,
        amplitude=float(wd.get("amplitude", 0.5)),
        period_s=float(wd.get("period_s", 60.0)),
        spikes=tuple(tuple(float(x) for x in s) for s in wd.get("spikes", [])),
    )
    sc = Scenario(name=str(d.get("name", "scenario")), services=services, request_types=rts, workload=workload, raw=d)
    if "nodes" in d:
        sc.nodes = int(d["nodes"])
        if sc.nodes < 1:
            raise ConfigError("nodes", "must be >= 1")
    if "node_capacity" in d:
        sc.node_capacity = _vec(d["node_capacity"], "node_capacity")
    bd = d.get("bounds", {})
    if "lower" in bd:
        sc.lower = _vec(bd["lower"], "bounds.lower")
    if "upper" in bd:
        sc.upper = _vec(bd["upper"], "bounds.upper")
    if "initial_limits" in d:
        sc.initial = _vec(d["initial_limits"], "initial_limits")
    for key, cast in (("timeout_factor", float), ("service_cv", float), ("rpc_latency_us", int), ("warm_pool", bool), ("max_replicas", int)):
        if key in d:
            setattr(sc, key, cast(d[key]))
    _validate(sc)
    return sc


def _validate(sc: Scenario) -> None:
    for sid in sc.services:
        lo, hi, _ = sc.bounds_for(sid)
        if np.any(lo <= 0):
            raise ConfigError(f"services.{sid}", "lower bounds must be > 0")
        if np.any(lo > hi):
            raise ConfigError(f"services.{sid}", "lower bound exceeds upper bound")
    for rt, spec in sc.request_types.items():
        if rt not in sc.services[spec.entry].handlers:
            raise ConfigError(f"request_types.{rt}.entry", f"service {spec.entry!r} has no handler for {rt!r}")
        # depth-first cycle check over the call graph reachable from the entry
        state: dict[str, int] = {}

        def visit(svc: str, path: tuple[str, ...]):
            if state.get(svc) == 1:
                raise ConfigError(f"request_types.{rt}", f"call cycle {' -> '.join(path + (svc,))}")
            if state.get(svc) == 2:
                return
            if svc not in sc.services:
                raise ConfigError(f"services.{path[-1]}.handlers.{rt}.calls", f"unknown service {svc!r}")
            handler = sc.services[svc].handlers.get(rt)
            if handler is None:
                raise ConfigError(f"services.{svc}.handlers", f"no handler for request type {rt!r}")
            state[svc] = 1
            for c in handler.calls:
                visit(c.service, path + (svc,))
            state[svc] = 2

        visit(spec.entry, ())


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    if not path.exists() and not path.suffix:
        return builtin_scenario(str(path))
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read scenario: {exc}") from None
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}", exc.msg) from None
    return parse_scenario(d)


BUILTIN_SCENARIOS = ("chain6", "fanout10", "mixed15")


def builtin_scenario(name: str) -> Scenario:
    if name not in BUILTIN_SCENARIOS:
        raise ConfigError("scenario", f"unknown built-in scenario {name!r}; choose from {BUILTIN_SCENARIOS}")
    text = importlib_resources.files("firm.scenarios").joinpath(f"{name}.json").read_text()
    return parse_scenario(json.loads(text))


