"""Control policies: FIRM, a CPU-utilization autoscaler, AIMD and a no-op observer."""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Mapping

import numpy as np

from firm.extractor import CandidateScore, Extractor, culprits, extract_critical_path
from firm.resources import NUM_RESOURCES, ResourceKind
from firm.rl.state import encode_state, map_action
from firm.sim.cluster import Action, ScaleIn, ScaleOut, SetLimit, Simulator, StepResult
from firm.trace import Relation, WorkflowRelation, build_execution_graph

POLICY_NAMES = ("firm", "aimd", "k8s", "none")


def _from_dict(cls, d: dict | None):
    d = dict(d or {})
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} settings: {sorted(unknown)}")
    return cls(**d)


@dataclass
class K8sParams:
    target_util: float = 0.5
    cooldown_s: int = 30
    max_replicas: int = 8


@dataclass
class AimdParams:
    a_inc: float = 0.1
    relative: bool = True  # a_inc is a fraction of each resource's [lower, upper] span
    beta: float = 0.8
    hold_s: int = 10
    low_util: float = 0.5


@dataclass
class FirmParams:
    scale_in_util: float = 0.25
    scale_in_steps: int = 10
    explore: bool = False


@dataclass
class PolicyParams:
    k8s: K8sParams
    aimd: AimdParams
    firm: FirmParams

    @classmethod
    def from_dict(cls, d: dict | None) -> PolicyParams:
        d = dict(d or {})
        unknown = set(d) - {"k8s", "aimd", "firm"}
        if unknown:
            raise ValueError(f"unknown policy sections: {sorted(unknown)}")
        return cls(_from_dict(K8sParams, d.get("k8s")), _from_dict(AimdParams, d.get("aimd")),
                   _from_dict(FirmParams, d.get("firm")))


@dataclass
class StepDecision:
    actions: list[tuple[str, Action]]
    predicted: list[str]
    scores: list[CandidateScore]


def ground_truth_path_instances(result: StepResult, slos: Mapping[str, tuple[float, float]]) -> set[str]:
    """Instances on the structural critical path of any request that missed its SLO this step."""
    out: set[str] = set()
    for tr in result.traces:
        if tr.latency_us <= slos[tr.request_type][0]:
            continue
        g = build_execution_graph(tr.spans)
        rels = [Relation(WorkflowRelation.SEQUENTIAL, a, b) for a, b in tr.sequential_truth]
        cp = extract_critical_path(g, rels)
        out.update(g.spans[s].instance_id for s in cp.span_ids)
    return out


def backlogged_instances(sim: Simulator) -> set[str]:
    """Instances holding at least one full round of waiting requests.

    Requests that time out never produce a trace, so path-based attribution
    alone goes blind exactly when a bottleneck is worst.
    """
    return {iid for iid, inst in sim.instances.items() if inst.queue and len(inst.queue) >= inst.workers}


def step_violated(result: StepResult, slos: Mapping[str, tuple[float, float]]) -> bool:
    from firm.extractor import detect_slo_violation

    for rt, (slo, pct) in slos.items():
        window = result.telemetry.latency_window(rt)
        if window and detect_slo_violation(window, slo, pct):
            return True
    return False


class NoPolicy:
    name = "none"

    def step(self, sim: Simulator, result: StepResult, prev: StepResult | None) -> StepDecision:
        return StepDecision([], [], [])


class K8sAutoscaler:
    """Replica count from CPU utilization: ceil(replicas * util / target), with a cooldown."""

    name = "k8s"

    def __init__(self, params: K8sParams):
        self.params = params
        self._last_scale: dict[str, int] = {}

    def desired(self, replicas: int, util: float) -> int:
        want = math.ceil(replicas * util / self.params.target_util - 1e-9)
        return max(1, min(self.params.max_replicas, want))

    def step(self, sim: Simulator, result: StepResult, prev: StepResult | None) -> StepDecision:
        t = result.telemetry.t
        actions: list[tuple[str, Action]] = []
        for iid, inst in result.telemetry.instances.items():
            util = float(inst.util_ratio[ResourceKind.CPU])
            want = self.desired(inst.replicas, util)
            if want == inst.replicas:
                continue
            last = self._last_scale.get(iid)
            if last is not None and t - last < self.params.cooldown_s:
                continue
            act: Action = ScaleOut() if want > inst.replicas else ScaleIn()
            for _ in range(abs(want - inst.replicas)):
                sim.execute_action(iid, act)
                actions.append((iid, act))
            self._last_scale[iid] = t
        return StepDecision(actions, [], [])


class AimdController:
    """Additive increase on attributed violations, multiplicative decrease when quiet."""

    name = "aimd"
    needs_traces = True

    def __init__(self, params: AimdParams, slos: Mapping[str, tuple[float, float]]):
        self.params = params
        self.slos = dict(slos)
        self._quiet: dict[str, int] = {}

    def step(self, sim: Simulator, result: StepResult, prev: StepResult | None) -> StepDecision:
        p = self.params
        blamed: set[str] = set()
        if step_violated(result, self.slos):
            blamed = ground_truth_path_instances(result, self.slos) | backlogged_instances(sim)
        actions: list[tuple[str, Action]] = []
        for iid, inst in result.telemetry.instances.items():
            limits = sim.instances[iid].limits
            if iid in blamed:
                self._quiet[iid] = 0
                for r in range(NUM_RESOURCES):
                    inc = p.a_inc * (limits.upper[r] - limits.lower[r]) if p.relative else p.a_inc
                    new = min(limits.upper[r], limits.limit[r] + inc)
                    if new != limits.limit[r]:
                        act = SetLimit(ResourceKind(r), float(new))
                        sim.execute_action(iid, act)
                        actions.append((iid, act))
                continue
            self._quiet[iid] = self._quiet.get(iid, 0) + 1
            if self._quiet[iid] < p.hold_s:
                continue
            util = inst.util_ratio
            for r in range(NUM_RESOURCES):
                if util[r] < p.low_util:
                    new = max(limits.lower[r], limits.limit[r] * p.beta)
                    if new != limits.limit[r]:
                        act = SetLimit(ResourceKind(r), float(new))
                        sim.execute_action(iid, act)
                        actions.append((iid, act))
        return StepDecision(actions, sorted(blamed), [])


def firm_actions(sim: Simulator, instance_id: str, raw: np.ndarray, low_streak: int,
                 params: FirmParams) -> list[Action]:
    """Turn one raw agent output into simulator actions, all-or-nothing.

    Any resource the node cannot grant turns the whole action into a
    scale-out; a floor action after a sustained low-utilization streak
    becomes a scale-in; otherwise every changed limit is set.
    """
    inst = sim.instances[instance_id]
    mapped = map_action(raw, inst.limits, sim.headroom(instance_id), inst.threads)
    if mapped.overflow_high.any():
        return [ScaleOut()] if inst.replicas < sim.scenario.max_replicas else []
    if mapped.overflow_low[ResourceKind.CPU] and low_streak >= params.scale_in_steps and inst.replicas > 1:
        return [ScaleIn()]
    return [SetLimit(ResourceKind(r), float(mapped.values[r]))
            for r in range(NUM_RESOURCES) if mapped.values[r] != inst.limits.limit[r]]


class FirmPolicy:
    """Detect, localize, then let the agent of each culprit pick its new limits."""

    name = "firm"
    needs_traces = True

    def __init__(self, extractor: Extractor, agents, params: FirmParams, timeout_factor: float = 10.0,
                 serves: Mapping[str, list[str]] | None = None):
        self.extractor = extractor
        self.agents = agents  # AgentPool
        self.params = params
        self.timeout_factor = timeout_factor
        self.serves = serves or {}
        self._low: dict[str, int] = {}

    def step(self, sim: Simulator, result: StepResult, prev: StepResult | None) -> StepDecision:
        t = result.telemetry.t
        tel = result.telemetry
        for iid, inst in tel.instances.items():
            low = inst.util_ratio[ResourceKind.CPU] < self.params.scale_in_util
            self._low[iid] = self._low.get(iid, 0) + 1 if low else 0
        self.extractor.observe(t, result.traces)
        scores = self.extractor.localize(t, result.traces, tel)
        predicted = culprits(scores)
        actions: list[tuple[str, Action]] = []
        for iid in predicted:
            svc = tel.instances[iid].service_id
            state = encode_state(tel, prev.telemetry if prev else None, iid, self.extractor.slos, True,
                                 self.serves.get(svc), self.timeout_factor)
            raw = self.agents.agent_for(svc).select_action(state.vector(), explore=self.params.explore)
            for act in firm_actions(sim, iid, raw, self._low.get(iid, 0), self.params):
                sim.execute_action(iid, act)
                actions.append((iid, act))
        return StepDecision(actions, predicted, scores)
