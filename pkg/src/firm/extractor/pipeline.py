"""Sliding-window culprit localization: traces in, candidate instances out."""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from firm.extractor.critical_path import CriticalPath, exclusive_latencies, extract_critical_path
from firm.extractor.features import (
    DegenerateVariance,
    InsufficientSamples,
    congestion_intensity,
    detect_slo_violation,
    relative_importance,
)
from firm.extractor.svm import SvmModel
from firm.trace import MIN_OBSERVATIONS, HappensBeforeStats, build_execution_graph, classify_graph


@dataclass(frozen=True)
class PathRecord:
    t: int
    trace_id: str
    request_type: str
    total: int  # T_cp
    shares: dict[str, int]  # instance -> T_i


@dataclass(frozen=True)
class CandidateScore:
    t: int
    trace_id: str
    instance_id: str
    ri: float
    ci: float
    score: float
    decision: bool
    error: str | None = None

    def to_record(self) -> dict:
        return {"t": self.t, "trace_id": self.trace_id, "instance_id": self.instance_id,
                "RI": self.ri, "CI": self.ci, "decision": self.decision}


class LatencyWindow:
    """The last ``span_s`` seconds of per-request path decompositions."""

    def __init__(self, span_s: int = 30):
        self.span_s = span_s
        self.records: deque[PathRecord] = deque()

    def add(self, rec: PathRecord) -> None:
        self.records.append(rec)

    def evict(self, now: int) -> None:
        while self.records and self.records[0].t <= now - self.span_s:
            self.records.popleft()

    def series(self, instance_id: str, request_type: str) -> tuple[np.ndarray, np.ndarray]:
        """Request-aligned (T_i, T_cp); T_i is 0 where the instance was off the path."""
        recs = [r for r in self.records if r.request_type == request_type]
        t_i = np.array([r.shares.get(instance_id, 0) for r in recs], dtype=float)
        t_cp = np.array([r.total for r in recs], dtype=float)
        return t_i, t_cp

    def samples(self, instance_id: str) -> list[int]:
        return [r.shares[instance_id] for r in self.records if r.shares.get(instance_id, 0) > 0]


def instance_features(window: LatencyWindow, instance_id: str, request_type: str,
                      ri_mode: str = "pcc") -> tuple[float, float, str | None]:
    """(RI, CI, error); degenerate inputs fall back to RI = 0 and CI = 1."""
    err = None
    t_i, t_cp = window.series(instance_id, request_type)
    try:
        ri = relative_importance(t_i, t_cp, ri_mode)
    except (DegenerateVariance, InsufficientSamples) as exc:
        ri, err = 0.0, f"RI: {exc}"
    try:
        ci = congestion_intensity(window.samples(instance_id))
    except InsufficientSamples as exc:
        ci = 1.0
        err = f"{err}; CI: {exc}" if err else f"CI: {exc}"
    return ri, ci, err


def extract_critical_components(cp: CriticalPath, shares: Mapping[str, int], request_type: str,
                                window: LatencyWindow, model: SvmModel, t: int = 0,
                                ri_mode: str = "pcc") -> list[CandidateScore]:
    """Score every instance on ``cp``; feature problems on one instance never stop the others."""
    out = []
    for iid in sorted(shares):
        ri, ci, err = instance_features(window, iid, request_type, ri_mode)
        score = model.decision(ri, ci)
        out.append(CandidateScore(t, cp.trace_id, iid, ri, ci, score, score > model.threshold, err))
    return out


def culprits(scores: Iterable[CandidateScore]) -> list[str]:
    return sorted({s.instance_id for s in scores if s.decision})


class Extractor:
    """Keeps happens-before evidence and the latency window across control steps."""

    def __init__(self, slos: Mapping[str, tuple[float, float]], model: SvmModel, window_s: int = 30,
                 ri_mode: str = "pcc", min_observations: int = MIN_OBSERVATIONS):
        self.slos = dict(slos)  # request type -> (slo_us, percentile)
        self.model = model
        self.window = LatencyWindow(window_s)
        self.ri_mode = ri_mode
        self.min_observations = min_observations
        self.hb = HappensBeforeStats()
        self._last: dict[str, tuple[CriticalPath, dict[str, int], int]] = {}

    def observe(self, t: int, traces) -> None:
        """Add one step's completed traces: ordering evidence first, then path decompositions."""
        graphs = [build_execution_graph(tr.spans) for tr in traces]
        for g in graphs:
            self.hb.record(g)
        self._last = {}
        for tr, g in zip(traces, graphs):
            cp = extract_critical_path(g, classify_graph(g, self.hb, self.min_observations))
            shares = exclusive_latencies(g, cp)
            self.window.add(PathRecord(t, g.trace_id, g.request_type, cp.total_latency, shares))
            self._last[g.trace_id] = (cp, shares, tr.latency_us)
        self.window.evict(t)

    def violated_types(self, telemetry) -> list[str]:
        out = []
        for rt, (slo, pct) in self.slos.items():
            window = telemetry.latency_window(rt)
            if window and detect_slo_violation(window, slo, pct):
                out.append(rt)
        return out

    def localize(self, t: int, traces, telemetry) -> list[CandidateScore]:
        """Score instances on the paths of this step's SLO-violating requests."""
        bad_types = set(self.violated_types(telemetry))
        if not bad_types:
            return []
        seen: dict[str, CandidateScore] = {}
        for tr in traces:
            if tr.request_type not in bad_types or tr.latency_us <= self.slos[tr.request_type][0]:
                continue
            cp, shares, _ = self._last[tr.trace_id]
            todo = {i: v for i, v in shares.items() if i not in seen}
            if not todo:
                continue
            for cand in extract_critical_components(cp, todo, tr.request_type, self.window, self.model, t, self.ri_mode):
                seen[cand.instance_id] = cand
        return [seen[i] for i in sorted(seen)]


def write_candidates(fh, scores: Iterable[CandidateScore]) -> None:
    for s in scores:
        fh.write(json.dumps(s.to_record(), sort_keys=True) + "\n")
