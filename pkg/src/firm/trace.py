"""Spans, per-request execution history graphs and workflow classification."""
from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

MIN_OBSERVATIONS = 20

SPAN_FIELDS = (
    "trace_id",
    "span_id",
    "parent_span_id",
    "service_id",
    "instance_id",
    "request_type",
    "start_us",
    "end_us",
    "background",
)


class TraceError(ValueError):
    def __init__(self, message: str, span_id: str | None = None):
        super().__init__(message)
        self.span_id = span_id


class MissingRoot(TraceError):
    pass


class MultipleRoots(TraceError):
    pass


class DanglingParent(TraceError):
    pass


class NegativeDuration(TraceError):
    pass


class UnknownSpan(TraceError):
    pass


@dataclass(frozen=True, slots=True)
class Span:
    trace_id: str
    span_id: str
    parent_span_id: str | None
    service_id: str
    instance_id: str
    request_type: str
    start: int
    end: int
    # set by the emitter for fire-and-forget calls whose result the parent never waits on
    background: bool = False

    @property
    def duration(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class ExecutionHistoryGraph:
    trace_id: str
    spans: dict[str, Span]
    children: dict[str, tuple[str, ...]]
    root: str

    @property
    def root_span(self) -> Span:
        return self.spans[self.root]

    @property
    def request_type(self) -> str:
        return self.spans[self.root].request_type

    def child_spans(self, span_id: str) -> list[Span]:
        return [self.spans[c] for c in self.children.get(span_id, ())]

    def walk(self) -> Iterator[Span]:
        """Pre-order traversal from the root, children in start order."""
        stack = [self.root]
        while stack:
            sid = stack.pop()
            yield self.spans[sid]
            stack.extend(reversed(self.children.get(sid, ())))


def _child_order(span: Span) -> tuple[int, str]:
    return (span.start, span.span_id)


def build_execution_graph(spans: Iterable[Span]) -> ExecutionHistoryGraph:
    spans = list(spans)
    if not spans:
        raise MissingRoot("no spans given")
    trace_ids = {s.trace_id for s in spans}
    if len(trace_ids) != 1:
        raise TraceError(f"spans belong to {len(trace_ids)} traces: {sorted(trace_ids)}")
    by_id: dict[str, Span] = {}
    for s in spans:
        if s.span_id in by_id:
            raise TraceError(f"duplicate span id {s.span_id}", s.span_id)
        if s.end < s.start:
            raise NegativeDuration(f"span {s.span_id} ends before it starts", s.span_id)
        by_id[s.span_id] = s
    roots = sorted(s.span_id for s in spans if s.parent_span_id is None)
    if not roots:
        raise MissingRoot(f"trace {spans[0].trace_id} has no root span", spans[0].span_id)
    if len(roots) > 1:
        raise MultipleRoots(f"trace has roots {roots}", roots[1])

    grouped: dict[str, list[Span]] = defaultdict(list)
    for s in spans:
        if s.parent_span_id is None:
            continue
        if s.parent_span_id not in by_id:
            raise DanglingParent(f"span {s.span_id} references missing parent {s.parent_span_id}", s.span_id)
        grouped[s.parent_span_id].append(s)
    children = {p: tuple(c.span_id for c in sorted(cs, key=_child_order)) for p, cs in grouped.items()}

    # every span must hang off the root; anything else sits on a parent cycle
    seen = {roots[0]}
    stack = [roots[0]]
    while stack:
        for c in children.get(stack.pop(), ()):
            seen.add(c)
            stack.append(c)
    if len(seen) != len(by_id):
        orphan = min(set(by_id) - seen)
        raise DanglingParent(f"span {orphan} is not reachable from the root (parent cycle)", orphan)
    return ExecutionHistoryGraph(spans[0].trace_id, by_id, children, roots[0])


# -- workflow classification -------------------------------------------------


class WorkflowRelation(Enum):
    PARALLEL = "parallel"
    SEQUENTIAL = "sequential"
    BACKGROUND = "background"
    UNORDERED = "unordered"


@dataclass(frozen=True)
class Relation:
    kind: WorkflowRelation
    first: str
    second: str | None = None


def overlaps(a: Span, b: Span) -> bool:
    """Strict interval overlap; identical starts of non-empty spans also count as parallel."""
    if a.start < b.start < a.end or b.start < a.start < b.end:
        return True
    return a.start == b.start and a.end > a.start and b.end > b.start


@dataclass
class HappensBeforeStats:
    """Per (earlier service, later service, parent service, request type) ordering evidence."""

    counts: dict[tuple[str, str, str, str], list[int]] = field(default_factory=dict)

    def observe(self, first: str, second: str, parent: str, request_type: str, violated: bool) -> None:
        entry = self.counts.setdefault((first, second, parent, request_type), [0, 0])
        entry[0] += 1
        entry[1] += int(violated)

    def record(self, graph: ExecutionHistoryGraph) -> None:
        """Add the ordering evidence from one trace."""
        rt = graph.request_type
        for pid, kids in graph.children.items():
            if len(kids) < 2:
                continue
            parent = graph.spans[pid].service_id
            cs = [graph.spans[k] for k in kids if not graph.spans[k].background]
            for a_idx, a in enumerate(cs):
                for b in cs[a_idx + 1:]:
                    # evidence for both orders, so services that swap places are never sequential
                    self.observe(a.service_id, b.service_id, parent, rt, a.end > b.start)
                    self.observe(b.service_id, a.service_id, parent, rt, b.end > a.start)

    def get(self, first: str, second: str, parent: str, request_type: str) -> tuple[int, int]:
        observed, violations = self.counts.get((first, second, parent, request_type), (0, 0))
        return observed, violations

    def merge(self, other: HappensBeforeStats) -> None:
        for key, (o, v) in other.counts.items():
            entry = self.counts.setdefault(key, [0, 0])
            entry[0] += o
            entry[1] += v


def happens_before(
    hb: HappensBeforeStats,
    i: str,
    j: str,
    parent: str,
    request_type: str,
    min_observations: int = MIN_OBSERVATIONS,
) -> bool:
    observed, violations = hb.get(i, j, parent, request_type)
    return observed >= min_observations and violations == 0


def classify_children(
    graph: ExecutionHistoryGraph,
    parent: str,
    hb: HappensBeforeStats,
    min_observations: int = MIN_OBSERVATIONS,
) -> list[Relation]:
    if parent not in graph.spans:
        raise UnknownSpan(f"span {parent} not in trace {graph.trace_id}", parent)
    p = graph.spans[parent]
    kids = graph.child_spans(parent)
    out = [Relation(WorkflowRelation.BACKGROUND, c.span_id) for c in kids if c.background]
    fg = [c for c in kids if not c.background]
    rt = graph.request_type
    for idx, a in enumerate(fg):
        for b in fg[idx + 1:]:
            if overlaps(a, b):
                kind = WorkflowRelation.PARALLEL
            elif a.end <= b.start and happens_before(hb, a.service_id, b.service_id, p.service_id, rt, min_observations):
                kind = WorkflowRelation.SEQUENTIAL
            else:
                kind = WorkflowRelation.UNORDERED
            out.append(Relation(kind, a.span_id, b.span_id))
    return out


def sequential_pairs(relations: Iterable[Relation]) -> set[tuple[str, str]]:
    return {(r.first, r.second) for r in relations if r.kind is WorkflowRelation.SEQUENTIAL}


def classify_graph(
    graph: ExecutionHistoryGraph, hb: HappensBeforeStats, min_observations: int = MIN_OBSERVATIONS
) -> dict[str, list[Relation]]:
    return {pid: classify_children(graph, pid, hb, min_observations) for pid in graph.children}


# -- JSON Lines export / import ----------------------------------------------


def span_to_record(span: Span) -> dict:
    return {
        "trace_id": span.trace_id,
        "span_id": span.span_id,
        "parent_span_id": span.parent_span_id,
        "service_id": span.service_id,
        "instance_id": span.instance_id,
        "request_type": span.request_type,
        "start_us": span.start,
        "end_us": span.end,
        "background": span.background,
    }


def span_from_record(rec: dict) -> Span:
    missing = [f for f in SPAN_FIELDS if f not in rec]
    if missing:
        raise TraceError(f"span record missing fields {missing}")
    parent = rec["parent_span_id"]
    return Span(
        trace_id=str(rec["trace_id"]),
        span_id=str(rec["span_id"]),
        parent_span_id=None if parent is None else str(parent),
        service_id=str(rec["service_id"]),
        instance_id=str(rec["instance_id"]),
        request_type=str(rec["request_type"]),
        start=int(rec["start_us"]),
        end=int(rec["end_us"]),
        background=bool(rec["background"]),
    )


def write_spans(fh, spans: Iterable[Span]) -> None:
    for s in spans:
        fh.write(json.dumps(span_to_record(s)) + "\n")


def read_spans(path: str | Path) -> list[Span]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(span_from_record(json.loads(line)))
            except (json.JSONDecodeError, TraceError) as exc:
                raise TraceError(f"{path}:{lineno}: {exc}") from exc
    return out


def group_by_trace(spans: Iterable[Span]) -> dict[str, list[Span]]:
    grouped: dict[str, list[Span]] = defaultdict(list)
    for s in spans:
        grouped[s.trace_id].append(s)
    return dict(grouped)
