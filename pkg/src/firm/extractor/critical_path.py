"""Critical path extraction over an execution history graph."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

from firm.trace import ExecutionHistoryGraph, Relation, Span, sequential_pairs


@dataclass(frozen=True)
class CriticalPath:
    trace_id: str
    span_ids: tuple[str, ...]  # chronological
    total_latency: int

    def __len__(self) -> int:
        return len(self.span_ids)


def _flatten(relations: Mapping[str, list[Relation]] | Iterable[Relation]) -> Iterable[Relation]:
    if isinstance(relations, Mapping):
        for rels in relations.values():
            yield from rels
    else:
        yield from relations


def _return_order(span: Span) -> tuple[int, int, str]:
    return (span.end, span.start, span.span_id)


def extract_critical_path(
    graph: ExecutionHistoryGraph, relations: Mapping[str, list[Relation]] | Iterable[Relation]
) -> CriticalPath:
    """Walk back from each span's last-returned child along happens-before links.

    At every span the last foreground child to return is on the path.  From it
    the walk repeatedly moves to the latest-returning sibling that happens
    before the current one, so the chosen siblings form a sequential chain.
    Every chosen child is then expanded the same way.  Background children are
    never considered.
    """
    seq = sequential_pairs(_flatten(relations))
    chosen: list[Span] = []
    stack = [graph.root]
    while stack:
        sid = stack.pop()
        chosen.append(graph.spans[sid])
        kids = [c for c in graph.child_spans(sid) if not c.background]
        if not kids:
            continue
        cur = max(kids, key=_return_order)
        stack.append(cur.span_id)
        while True:
            preds = [c for c in kids if (c.span_id, cur.span_id) in seq]
            if not preds:
                break
            cur = max(preds, key=_return_order)
            stack.append(cur.span_id)
    chosen.sort(key=lambda s: (s.start, s.span_id))
    return CriticalPath(graph.trace_id, tuple(s.span_id for s in chosen), graph.root_span.duration)


def exclusive_latencies(graph: ExecutionHistoryGraph, cp: CriticalPath) -> dict[str, int]:
    """Per-instance share of the path latency: span time not covered by its on-path children.

    Children on the path form a non-overlapping chain inside their parent, so
    the shares are non-negative and sum to the root duration.
    """
    on_path = set(cp.span_ids)
    out: dict[str, int] = {}
    for sid in cp.span_ids:
        span = graph.spans[sid]
        covered = sum(graph.spans[c].duration for c in graph.children.get(sid, ()) if c in on_path)
        out[span.instance_id] = out.get(span.instance_id, 0) + span.duration - covered
    return out
