"""Violation episodes and their mitigation times."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

COMPLIANT_RUN = 3


@dataclass
class MitigationEpisodeRecord:
    violation_start: int
    mitigated_at: int | None = None
    predicted: set[str] = field(default_factory=set)
    ground_truth: set[str] = field(default_factory=set)
    actions: list[tuple[int, str, str]] = field(default_factory=list)  # (step, instance, action)
    censored_at: int | None = None

    def __post_init__(self):
        if self.mitigated_at is not None and self.mitigated_at < self.violation_start:
            raise ValueError("mitigated_at precedes violation_start")

    @property
    def duration(self) -> int | None:
        if self.mitigated_at is not None:
            return self.mitigated_at - self.violation_start
        if self.censored_at is not None:
            return self.censored_at - self.violation_start
        return None

    def to_record(self) -> dict:
        return {
            "violation_start": self.violation_start,
            "mitigated_at": self.mitigated_at,
            "censored": self.mitigated_at is None,
            "duration_s": self.duration,
            "predicted": sorted(self.predicted),
            "ground_truth": sorted(self.ground_truth),
            "actions": [list(a) for a in self.actions],
        }


def mitigation_episodes(violated: list[bool], run: int = COMPLIANT_RUN) -> list[MitigationEpisodeRecord]:
    """Split a per-step violation series into episodes.

    An episode starts at a violating step and is mitigated at the first later
    step that opens a run of ``run`` compliant steps.  Episodes still open at
    the end are censored at the horizon.
    """
    out: list[MitigationEpisodeRecord] = []
    n = len(violated)
    t = 0
    while t < n:
        if not violated[t]:
            t += 1
            continue
        start = t
        s = start + 1
        while s < n:
            if not violated[s] and all(not v for v in violated[s:s + run]) and s + run <= n:
                break
            s += 1
        if s < n:
            out.append(MitigationEpisodeRecord(start, mitigated_at=s))
            t = s + run
        else:
            out.append(MitigationEpisodeRecord(start, censored_at=n))
            t = n
    return out


def mitigation_time(records: list[MitigationEpisodeRecord]) -> list[tuple[int, bool]]:
    """(duration in steps, censored) per violation episode."""
    return [(r.duration, r.mitigated_at is None) for r in records]


class MitigationTracker:
    """Online version of ``mitigation_episodes`` that also gathers culprits and actions."""

    def __init__(self, run: int = COMPLIANT_RUN):
        self.run = run
        self.violated: list[bool] = []
        self._events: list[tuple[set[str], set[str], list[tuple[int, str, str]]]] = []

    def observe(self, violated: bool, predicted=(), ground_truth=(), actions=()) -> None:
        self.violated.append(bool(violated))
        self._events.append((set(predicted), set(ground_truth), list(actions)))

    def records(self) -> list[MitigationEpisodeRecord]:
        recs = mitigation_episodes(self.violated, self.run)
        for rec in recs:
            end = rec.mitigated_at if rec.mitigated_at is not None else rec.censored_at
            for t in range(rec.violation_start, end + 1 if rec.mitigated_at is not None else end):
                pred, truth, acts = self._events[t]
                rec.predicted |= pred
                rec.ground_truth |= truth
                rec.actions.extend(acts)
        return recs


def write_records(fh, records: list[MitigationEpisodeRecord]) -> None:
    for r in records:
        fh.write(json.dumps(r.to_record(), sort_keys=True) + "\n")
