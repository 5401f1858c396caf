"""Closed-loop runs: one policy, one seed, one campaign, per-step records out."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from firm.anomaly import US_PER_S, Campaign, CampaignParams, empty_campaign, schedule_campaign
from firm.controller.mitigation import MitigationEpisodeRecord, MitigationTracker, write_records
from firm.controller.policies import (
    AimdController,
    FirmPolicy,
    K8sAutoscaler,
    NoPolicy,
    PolicyParams,
    step_violated,
)
from firm.extractor import Extractor, SvmModel
from firm.resources import ResourceKind
from firm.rng import substream
from firm.sim.cluster import ScaleIn, ScaleOut, SetLimit, Simulator
from firm.sim.scenario import Scenario
from firm.sim.telemetry import nearest_rank
from firm.trace import write_spans

STEP_HEADER = ["t", "violated", "requested_cpu", "replicas", "completed", "dropped", "actions", "predicted", "targets"]


def experiment_campaign(scenario: Scenario, seed: int, horizon: int, params: CampaignParams | None) -> Campaign:
    """The campaign every policy sees for ``seed``; ``None`` means no injections."""
    if params is None:
        return empty_campaign()
    return schedule_campaign(params, horizon * US_PER_S, scenario.instance_ids, substream(seed, "campaign"), seed=seed)


def make_policy(name: str, scenario: Scenario, params: PolicyParams | None = None, pool=None,
                svm: SvmModel | None = None, window_s: int = 30):
    params = params or PolicyParams.from_dict(None)
    if name == "none":
        return NoPolicy()
    if name == "k8s":
        return K8sAutoscaler(params.k8s)
    if name == "aimd":
        return AimdController(params.aimd, scenario.slos)
    if name == "firm":
        if pool is None or svm is None:
            raise ValueError("the firm policy needs trained agents and a localization model")
        return FirmPolicy(Extractor(scenario.slos, svm, window_s), pool, params.firm, scenario.timeout_factor,
                          scenario.serves())
    raise ValueError(f"unknown policy {name!r}")


def action_label(action) -> str:
    if isinstance(action, SetLimit):
        return f"set:{ResourceKind(action.resource).name.lower()}={action.value!r}"
    if isinstance(action, ScaleOut):
        return "scale_out"
    if isinstance(action, ScaleIn):
        return "scale_in"
    return repr(action)


@dataclass
class StepRecord:
    t: int
    violated: bool
    requested_cpu: float  # CPU limit summed over every replica
    replicas: int
    completed: int
    dropped: int
    actions: list[tuple[str, str]]
    predicted: list[str]
    targets: list[str]

    def row(self) -> list:
        return [self.t, int(self.violated), repr(self.requested_cpu), self.replicas, self.completed, self.dropped,
                ";".join(f"{i}/{a}" for i, a in self.actions), ";".join(self.predicted), ";".join(self.targets)]


@dataclass
class ExperimentResult:
    policy: str
    seed: int
    steps: list[StepRecord]
    mitigations: list[MitigationEpisodeRecord]
    latencies: dict[str, list[float]] = field(default_factory=dict)  # per request type, drops as +inf

    @property
    def violation_steps(self) -> int:
        return sum(s.violated for s in self.steps)

    @property
    def requested_cpu(self) -> float:
        """CPU-seconds of limits held over the run."""
        return float(sum(s.requested_cpu for s in self.steps))

    @property
    def dropped(self) -> int:
        return sum(s.dropped for s in self.steps)

    def mitigation_times(self) -> list[int]:
        """Durations in steps; episodes still open at the horizon count up to the horizon."""
        return [r.duration for r in self.mitigations]

    def mean_mitigation(self) -> float:
        d = self.mitigation_times()
        return float(np.mean(d)) if d else 0.0

    def summary(self) -> dict:
        out = {
            "policy": self.policy,
            "seed": self.seed,
            "steps": len(self.steps),
            "violation_steps": self.violation_steps,
            "violation_episodes": len(self.mitigations),
            "censored_episodes": sum(r.mitigated_at is None for r in self.mitigations),
            "mean_mitigation_s": self.mean_mitigation(),
            "requested_cpu_s": self.requested_cpu,
            "dropped": self.dropped,
            "actions": sum(len(s.actions) for s in self.steps),
        }
        for rt, lat in sorted(self.latencies.items()):
            out[f"p99_us:{rt}"] = nearest_rank(lat, 99) if lat else None
        return out

    def write_steps(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STEP_HEADER)
        for s in self.steps:
            w.writerow(s.row())

    def write_mitigations(self, fh) -> None:
        write_records(fh, self.mitigations)

    def write_summary(self, fh) -> None:
        fh.write(json.dumps(self.summary(), sort_keys=True) + "\n")


def run_experiment(scenario: Scenario, policy, seed: int, horizon: int, campaign: Campaign | None = None,
                   telemetry_writer=None, trace_fh=None) -> ExperimentResult:
    """Drive ``policy`` against the simulator for ``horizon`` one-second steps.

    ``trace_fh`` receives every completed trace's spans as JSONL.
    """
    keep = bool(getattr(policy, "needs_traces", False)) or trace_fh is not None
    sim = Simulator(scenario, seed, campaign, keep_spans=keep)
    slos = scenario.slos
    tracker = MitigationTracker()
    steps: list[StepRecord] = []
    latencies: dict[str, list[float]] = {rt: [] for rt in scenario.request_types}
    prev = None
    for _ in range(horizon):
        res = sim.step()
        tel = res.telemetry
        if telemetry_writer is not None:
            telemetry_writer.write(tel)
        if trace_fh is not None:
            for tr in res.traces:
                write_spans(trace_fh, tr.spans)
        for rt in latencies:
            latencies[rt].extend(tel.latency_window(rt))
        violated = step_violated(res, slos)
        decision = policy.step(sim, res, prev)
        acts = [(iid, action_label(a)) for iid, a in decision.actions]
        cpu = sum(float(i.limits.limit[ResourceKind.CPU]) * i.replicas for i in sim.instances.values())
        steps.append(StepRecord(tel.t, violated, cpu, sum(i.replicas for i in sim.instances.values()),
                                tel.completed, tel.dropped, acts, list(decision.predicted),
                                sorted(res.anomaly_targets)))
        tracker.observe(violated, decision.predicted, res.anomaly_targets, [(tel.t, i, a) for i, a in acts])
        prev = res
    return ExperimentResult(getattr(policy, "name", "custom"), seed, steps, tracker.records(), latencies)
