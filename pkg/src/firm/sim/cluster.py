"""Deterministic discrete-event simulation of a microservice cluster.

Every service visit waits in its instance's FIFO queue for a worker, computes
for ``service_time`` (inflated by resource contention), then dispatches its
downstream calls stage by stage.  Workers are released after compute, so a
slow child never holds its parent's workers.
"""
from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from firm.anomaly import Campaign, empty_campaign
from firm.resources import NUM_RESOURCES, ResourceKind, ResourceLimits
from firm.rng import substream
from firm.sim.scenario import Scenario, ServiceSpec
from firm.sim.telemetry import InstanceTelemetry, TelemetrySnapshot
from firm.sim.workload import US_PER_S, generate_arrivals
from firm.trace import Span

# (mean, std) in ms of applying one resource-management operation
PARTITION_DELAY_MS = {
    ResourceKind.CPU: (2.1, 0.3),
    ResourceKind.MEMBW: (42.4, 11.0),
    ResourceKind.LLC: (39.8, 9.2),
    ResourceKind.IO: (2.3, 0.4),
    ResourceKind.NET: (12.3, 1.1),
}
WARM_START_MS = (45.7, 6.9)
COLD_START_MS = (2050.8, 291.4)


class ZeroAvailability(RuntimeError):
    pass


class UnknownInstance(KeyError):
    pass


@dataclass(frozen=True)
class SetLimit:
    resource: ResourceKind
    value: float


@dataclass(frozen=True)
class ScaleOut:
    pass


@dataclass(frozen=True)
class ScaleIn:
    pass


Action = SetLimit | ScaleOut | ScaleIn


class InstanceState:
    __slots__ = ("instance_id", "service_id", "node", "limits", "replicas", "threads",
                 "queue", "busy", "demand", "pressure", "slowdown", "replica_nodes")

    def __init__(self, instance_id: str, service_id: str, node: int, limits: ResourceLimits, threads: int):
        self.instance_id = instance_id
        self.service_id = service_id
        self.node = node
        self.limits = limits
        self.replicas = 1
        self.threads = threads
        self.queue: deque = deque()
        self.busy = 0
        self.demand = np.zeros(NUM_RESOURCES)  # total over replicas, this step
        self.pressure = np.zeros(NUM_RESOURCES)
        self.slowdown = 1.0
        self.replica_nodes = [node]

    @property
    def workers(self) -> int:
        per_replica = min(self.threads, max(1, math.floor(self.limits.limit[ResourceKind.CPU] + 1e-9)))
        return per_replica * self.replicas


def slowdown_factor(demand: np.ndarray, limit: np.ndarray, pressure: np.ndarray) -> float:
    """Bottleneck inflation: max over resources of demand / available, at least 1."""
    avail = limit * (1.0 - pressure)
    worst = 1.0
    for r in range(NUM_RESOURCES):
        if demand[r] <= 0:
            continue
        if avail[r] <= 0:
            raise ZeroAvailability(f"resource {ResourceKind(r).name} has no availability")
        worst = max(worst, demand[r] / avail[r])
    return worst


def service_time(
    spec: ServiceSpec,
    inst: InstanceState,
    request_type: str,
    offered_rate: float | Mapping[str, float],
    anomaly_pressure: np.ndarray,
) -> float:
    """Contention-inflated service time in µs for one visit of ``request_type``.

    ``offered_rate`` is the request rate at the instance, either for
    ``request_type`` alone or per request type (demands then add up).
    """
    rates = offered_rate if isinstance(offered_rate, Mapping) else {request_type: offered_rate}
    demand = np.zeros(NUM_RESOURCES)
    for rt, rate in rates.items():
        if rate < 0:
            raise ValueError("offered rate must be >= 0")
        demand += spec.handlers[rt].demand * rate
    demand /= inst.replicas
    return spec.handlers[request_type].base_service_time * slowdown_factor(demand, inst.limits.limit, np.asarray(anomaly_pressure, float))


@dataclass
class Trace:
    """A completed request: its spans plus the simulator's ground truth structure."""

    trace_id: str
    request_type: str
    spans: list[Span]
    latency_us: int
    # (earlier span, later span) pairs that the call structure orders
    sequential_truth: set[tuple[str, str]] = field(default_factory=set)


class _Request:
    __slots__ = ("rid", "trace_id", "rtype", "start", "dropped", "responded", "spans", "open", "nspan",
                 "seq_truth", "latency")

    def __init__(self, rid: int, rtype: str, start: int):
        self.rid = rid
        self.trace_id = f"t{rid:08d}"
        self.rtype = rtype
        self.start = start
        self.dropped = False
        self.responded = False
        self.spans: list[Span] = []
        self.open = 0
        self.nspan = 0
        self.seq_truth: set[tuple[str, str]] = set()
        self.latency = 0


class _Visit:
    __slots__ = ("req", "span_id", "parent", "inst", "background", "arrive", "stage", "pending", "stages", "handler", "done_ids", "prev_ids")

    def __init__(self, req, span_id, parent, inst, background, arrive, handler):
        self.req = req
        self.span_id = span_id
        self.parent = parent
        self.inst = inst
        self.background = background
        self.arrive = arrive
        self.handler = handler
        self.stages = handler.stages_cache
        self.stage = 0
        self.pending = 0
        self.done_ids: list[str] = []  # span ids of children from completed stages
        self.prev_ids: list[str] = []


_ARRIVE, _COMPUTED, _RESPOND, _ACTION = 0, 1, 2, 3


class _HandlerView:
    """Handler plus its precomputed stage list."""

    __slots__ = ("base", "stages_cache")

    def __init__(self, handler):
        self.base = handler.base_service_time
        self.stages_cache = handler.stages()


@dataclass
class StepResult:
    telemetry: TelemetrySnapshot
    traces: list[Trace]
    anomaly_targets: set[str]
    # targets whose injection changes their behaviour this step (slower service, extra delay);
    # a weak pressure injection below the instance's headroom has no effect and is left out
    effective_targets: set[str] = field(default_factory=set)


class Simulator:
    def __init__(self, scenario: Scenario, seed: int, campaign: Campaign | None = None, keep_spans: bool = True):
        self.scenario = scenario
        self.seed = int(seed)
        self.campaign = campaign if campaign is not None else empty_campaign()
        self.keep_spans = keep_spans
        self.t = 0
        self.now = 0
        self._heap: list = []
        self._seq = 0
        self._rid = 0
        self._in_flight: dict[int, _Request] = {}
        self._rng_arrivals = substream(seed, "workload")
        self._rng_service = substream(seed, "service")
        self._rng_actions = substream(seed, "actions")
        self._rng_network = substream(seed, "network")
        self.instances: dict[str, InstanceState] = {}
        self._service_instance: dict[str, InstanceState] = {}
        for k, (sid, spec) in enumerate(scenario.services.items()):
            lo, hi, init = scenario.bounds_for(sid)
            inst = InstanceState(scenario.instance_id(sid), sid, k % scenario.nodes, ResourceLimits(init, lo, hi), spec.threads)
            self.instances[inst.instance_id] = inst
            self._service_instance[sid] = inst
        self._handlers = {
            (sid, rt): _HandlerView(h) for sid, spec in scenario.services.items() for rt, h in spec.handlers.items()
        }
        self._multiplicity = scenario.visit_multiplicity()
        self._timeouts = {rt: scenario.timeout_us(rt) for rt in scenario.request_types}
        self._shape = 1.0 / scenario.service_cv**2 if scenario.service_cv > 0 else 0.0
        self._delay: dict[str, tuple[float, float]] = {}
        self.totals = {"arrivals": 0, "completed": 0, "dropped": 0}
        self.action_log: list[tuple[int, str, Action]] = []
        self._reset_step_stats()

    # -- public API ----------------------------------------------------------

    @property
    def in_flight(self) -> int:
        return len(self._in_flight)

    def instance_for(self, service_id: str) -> InstanceState:
        return self._service_instance[service_id]

    def headroom(self, instance_id: str) -> np.ndarray:
        """Largest per-replica limit this instance could take on every node hosting it."""
        inst = self._get(instance_id)
        usage = np.zeros((self.scenario.nodes, NUM_RESOURCES))
        own = np.zeros(self.scenario.nodes)
        for other in self.instances.values():
            for n in other.replica_nodes:
                if other is inst:
                    own[n] += 1
                else:
                    usage[n] += other.limits.limit
        best = np.full(NUM_RESOURCES, np.inf)
        for n in set(inst.replica_nodes):
            best = np.minimum(best, (self.scenario.node_capacity - usage[n]) / own[n])
        return np.maximum(best, 0.0)

    def submit(self, request_type: str, time_us: int) -> None:
        """Inject one extra request arriving at ``time_us`` (must not be in the past)."""
        if request_type not in self.scenario.request_types:
            raise KeyError(f"unknown request type {request_type!r}")
        if time_us < self.now:
            raise ValueError("cannot submit a request in the past")
        self._rid += 1
        req = _Request(self._rid, request_type, int(time_us))
        self._in_flight[req.rid] = req
        self.totals["arrivals"] += 1
        self._spawn(req, None, self._service_instance[self.scenario.request_types[request_type].entry], False, int(time_us))

    def execute_action(self, instance_id: str, action: Action) -> int:
        """Schedule ``action``; returns the simulated time (µs) at which it takes effect."""
        inst = self._get(instance_id)
        if isinstance(action, SetLimit):
            mean, std = PARTITION_DELAY_MS[ResourceKind(action.resource)]
            action = SetLimit(ResourceKind(action.resource), inst.limits.clamp(int(action.resource), action.value))
        elif isinstance(action, ScaleOut):
            mean, std = WARM_START_MS if self.scenario.warm_pool else COLD_START_MS
        elif isinstance(action, ScaleIn):
            mean, std = 0.0, 0.0
        else:
            raise TypeError(f"unknown action {action!r}")
        delay_ms = max(0.0, float(self._rng_actions.normal(mean, std))) if std > 0 else mean
        applied_at = self.now + int(round(delay_ms * 1000))
        self._push(applied_at, _ACTION, (inst, action))
        self.action_log.append((applied_at, instance_id, action))
        return applied_at

    def step(self) -> StepResult:
        sc = self.scenario
        t0 = self.t * US_PER_S
        t_end = t0 + US_PER_S
        active = self.campaign.active_at(t0)
        targets = {i.target_instance for i in active}
        arrivals = generate_arrivals(sc.workload, self.t, self._rng_arrivals)

        # per-instance offered load for this step drives the contention model
        counts: dict[str, int] = {}
        for _, rt in arrivals:
            counts[rt] = counts.get(rt, 0) + 1
        self._offered = {iid: 0.0 for iid in self.instances}
        effective: set[str] = set()
        for inst in self.instances.values():
            demand = np.zeros(NUM_RESOURCES)
            rate_total = 0.0
            spec = sc.services[inst.service_id]
            for rt, n in counts.items():
                m = self._multiplicity[rt].get(inst.service_id, 0)
                if m and rt in spec.handlers:
                    demand += spec.handlers[rt].demand * (n * m)
                    rate_total += n * m
            mult = self.campaign.workload_multiplier(inst.instance_id, t0, active) if targets else 1.0
            inst.demand = demand * mult
            inst.pressure = self.campaign.pressure_vector(inst.instance_id, t0, active) if targets else np.zeros(NUM_RESOURCES)
            self._offered[inst.instance_id] = rate_total * mult
            self._refresh(inst)
            self._delay[inst.instance_id] = self.campaign.network_delay(inst.instance_id, t0, active) if targets else (0.0, 0.0)
            if inst.instance_id in targets:
                calm = slowdown_factor(demand / inst.replicas, inst.limits.limit, np.zeros(NUM_RESOURCES))
                if inst.slowdown > calm * (1 + 1e-9) or self._delay[inst.instance_id][0] > 0:
                    effective.add(inst.instance_id)

        for tm, rt in arrivals:
            self._rid += 1
            req = _Request(self._rid, rt, tm)
            self._in_flight[req.rid] = req
            entry = sc.request_types[rt].entry
            self._spawn(req, None, self._service_instance[entry], False, tm)
        self.totals["arrivals"] += len(arrivals)
        self._arrivals_by_type = counts

        heap = self._heap
        pop = heapq.heappop
        while heap and heap[0][0] < t_end:
            tm, _, code, obj = pop(heap)
            self.now = tm
            if code == _ARRIVE:
                self._on_arrive(obj, tm)
            elif code == _COMPUTED:
                self._on_computed(obj, tm)
            elif code == _RESPOND:
                self._on_respond(obj, tm)
            else:
                self._on_action(obj[0], obj[1])
        self.now = t_end

        # time out requests stuck anywhere in the system
        for rid in [rid for rid, req in self._in_flight.items() if t_end - req.start > self._timeouts[req.rtype]]:
            self._drop(self._in_flight[rid])

        snap = self._snapshot(arrivals)
        traces = self._done_traces
        self._reset_step_stats()
        self.t += 1
        return StepResult(snap, traces, targets, effective)

    # -- internals -------------------------------------------------------------

    def _get(self, instance_id: str) -> InstanceState:
        try:
            return self.instances[instance_id]
        except KeyError:
            raise UnknownInstance(instance_id) from None

    def _push(self, tm: int, code: int, obj) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (tm, self._seq, code, obj))

    def _refresh(self, inst: InstanceState) -> None:
        per_replica = inst.demand / inst.replicas
        try:
            inst.slowdown = slowdown_factor(per_replica, inst.limits.limit, inst.pressure)
        except ZeroAvailability:
            inst.slowdown = math.inf

    def _reset_step_stats(self) -> None:
        self._latencies: dict[str, list[int]] = {rt: [] for rt in self.scenario.request_types}
        self._inst_latency: dict[str, list[int]] = {iid: [] for iid in self.instances}
        self._dropped_by_type: dict[str, int] = {rt: 0 for rt in self.scenario.request_types}
        self._completed = 0
        self._done_traces: list[Trace] = []

    def _spawn(self, req: _Request, parent: _Visit | None, inst: InstanceState, background: bool, tm: int) -> _Visit:
        req.nspan += 1
        v = _Visit(req, f"{req.trace_id}.{req.nspan}", parent, inst, background, tm,
                   self._handlers[(inst.service_id, req.rtype)])
        req.open += 1
        self._push(tm, _ARRIVE, v)
        return v

    def _on_arrive(self, v: _Visit, tm: int) -> None:
        if v.req.dropped:
            v.req.open -= 1
            return
        inst = v.inst
        if inst.busy < inst.workers:
            self._start(v, tm)
        else:
            inst.queue.append(v)

    def _start(self, v: _Visit, tm: int) -> None:
        inst = v.inst
        if math.isinf(inst.slowdown):
            self._drop(v.req)
            v.req.open -= 1
            return
        dur = v.handler.base * inst.slowdown
        if self._shape:
            dur *= self._rng_service.gamma(self._shape, 1.0 / self._shape)
        inst.busy += 1
        self._push(tm + max(1, int(dur)), _COMPUTED, v)

    def _drain(self, inst: InstanceState, tm: int) -> None:
        q = inst.queue
        while q and inst.busy < inst.workers:
            nxt = q.popleft()
            if nxt.req.dropped:
                nxt.req.open -= 1
                continue
            self._start(nxt, tm)

    def _on_computed(self, v: _Visit, tm: int) -> None:
        inst = v.inst
        inst.busy -= 1
        self._drain(inst, tm)
        if v.req.dropped:
            v.req.open -= 1
            return
        self._advance(v, tm)

    def _advance(self, v: _Visit, tm: int) -> None:
        stages = v.stages
        rpc = self.scenario.rpc_latency_us
        while v.stage < len(stages):
            kind, services = stages[v.stage]
            if kind == "background":
                self._spawn(v.req, v, self._service_instance[services[0]], True, tm + rpc)
                v.stage += 1
                continue
            prev = v.done_ids
            current = []
            for svc in services:
                child = self._spawn(v.req, v, self._service_instance[svc], False, tm + rpc)
                current.append(child.span_id)
            for a in prev:
                for b in current:
                    v.req.seq_truth.add((a, b))
            v.prev_ids = current
            v.pending = len(services)
            return
        mu, sigma = self._delay[v.inst.instance_id]
        if mu > 0:
            extra = max(0.0, float(self._rng_network.normal(mu, sigma)))
            self._push(tm + int(extra), _RESPOND, v)
        else:
            self._on_respond(v, tm)

    def _on_respond(self, v: _Visit, tm: int) -> None:
        req = v.req
        req.open -= 1
        if req.dropped:
            return
        if self.keep_spans:
            req.spans.append(Span(req.trace_id, v.span_id, v.parent.span_id if v.parent else None,
                                  v.inst.service_id, v.inst.instance_id, req.rtype, v.arrive, tm, v.background))
        self._inst_latency[v.inst.instance_id].append(tm - v.arrive)
        parent = v.parent
        if parent is None:
            self._finish_request(req, tm)
        elif not v.background:
            parent.pending -= 1
            if parent.pending == 0:
                parent.done_ids = parent.done_ids + parent.prev_ids
                parent.stage += 1
                self._advance(parent, tm)
        if req.open == 0 and req.responded and self.keep_spans:
            self._done_traces.append(Trace(req.trace_id, req.rtype, req.spans, req.latency, req.seq_truth))

    def _finish_request(self, req: _Request, tm: int) -> None:
        latency = tm - req.start
        if latency > self._timeouts[req.rtype]:
            self._drop(req)
            return
        req.responded = True
        req.latency = latency
        del self._in_flight[req.rid]
        self.totals["completed"] += 1
        self._completed += 1
        self._latencies[req.rtype].append(latency)

    def _drop(self, req: _Request) -> None:
        if req.dropped or req.responded:
            return
        req.dropped = True
        self._in_flight.pop(req.rid, None)
        self.totals["dropped"] += 1
        self._dropped_by_type[req.rtype] += 1

    def _on_action(self, inst: InstanceState, action: Action) -> None:
        if isinstance(action, SetLimit):
            inst.limits.set(int(action.resource), action.value)
        elif isinstance(action, ScaleOut):
            if inst.replicas < self.scenario.max_replicas:
                inst.replicas += 1
                inst.replica_nodes.append((inst.replica_nodes[-1] + 1) % self.scenario.nodes)
        else:
            if inst.replicas > 1:
                inst.replicas -= 1
                inst.replica_nodes.pop()
        self._refresh(inst)
        self._drain(inst, self.now)

    def _snapshot(self, arrivals) -> TelemetrySnapshot:
        n = len(arrivals)
        mix = {rt: (self._arrivals_by_type.get(rt, 0) / n if n else 0.0) for rt in self.scenario.request_types}
        insts = {}
        for iid, inst in self.instances.items():
            per_replica = inst.demand / inst.replicas
            avail = inst.limits.limit * (1.0 - inst.pressure)
            insts[iid] = InstanceTelemetry(
                instance_id=iid,
                service_id=inst.service_id,
                utilization=np.minimum(per_replica, avail),
                limits=inst.limits.limit.copy(),
                lower=inst.limits.lower.copy(),
                upper=inst.limits.upper.copy(),
                replicas=inst.replicas,
                offered_rate=self._offered[iid],
                latencies=self._inst_latency[iid],
                queue_length=len(inst.queue),
            )
        return TelemetrySnapshot(
            t=self.t,
            instances=insts,
            arrival_rate=float(n),
            request_mix=mix,
            latencies=self._latencies,
            dropped_by_type=self._dropped_by_type,
            completed=self._completed,
            in_flight=len(self._in_flight),
        )
