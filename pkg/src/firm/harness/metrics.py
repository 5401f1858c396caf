"""Evaluation metrics: ROC sweeps, latency CDFs and per-policy aggregates."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class DegenerateLabels(ValueError):
    """ROC needs at least one positive and one negative label."""


@dataclass(frozen=True)
class RocPoint:
    threshold: float  # predict positive when score >= threshold
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def tpr(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else math.nan

    @property
    def fpr(self) -> float:
        return self.fp / (self.fp + self.tn) if self.fp + self.tn else math.nan


@dataclass(frozen=True)
class RocCurve:
    points: list[RocPoint]  # from the strictest threshold (0, 0) to the loosest (1, 1)
    auc: float

    @property
    def fpr(self) -> list[float]:
        return [p.fpr for p in self.points]

    @property
    def tpr(self) -> list[float]:
        return [p.tpr for p in self.points]

    def best_tpr(self, max_fpr: float) -> float:
        """Highest TPR among operating points with FPR <= ``max_fpr``."""
        return max(p.tpr for p in self.points if p.fpr <= max_fpr + 1e-12)


def confusion_sweep(scores: Sequence[tuple[float, bool]]) -> list[RocPoint]:
    """Confusion counts at every distinct score used as a threshold, plus +inf."""
    ordered = sorted(((float(s), bool(y)) for s, y in scores), key=lambda p: -p[0])
    pos = sum(y for _, y in ordered)
    neg = len(ordered) - pos
    out = [RocPoint(math.inf, 0, 0, neg, pos)]
    tp = fp = 0
    i = 0
    while i < len(ordered):
        s = ordered[i][0]
        while i < len(ordered) and ordered[i][0] == s:
            tp += ordered[i][1]
            fp += not ordered[i][1]
            i += 1
        out.append(RocPoint(s, tp, fp, neg - fp, pos - tp))
    return out


def compute_roc(scores: Sequence[tuple[float, bool]]) -> RocCurve:
    """Threshold sweep over the unique scores with a trapezoidal AUC."""
    labels = [bool(y) for _, y in scores]
    if not any(labels) or all(labels):
        raise DegenerateLabels("ROC needs at least one positive and one negative label")
    pts = confusion_sweep(scores)
    fpr = np.array([p.fpr for p in pts])
    tpr = np.array([p.tpr for p in pts])
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))
    return RocCurve(pts, auc)


def latency_cdf(samples: Iterable[float], probs: Sequence[float] | None = None) -> list[tuple[float, float]]:
    """(probability, nearest-rank latency) pairs; dropped requests sit at +inf."""
    x = np.sort(np.asarray(list(samples), dtype=float))
    if probs is None:
        probs = [k / 100 for k in range(1, 100)] + [0.995, 0.999, 1.0]
    if x.size == 0:
        return [(p, math.nan) for p in probs]
    out = []
    for p in probs:
        rank = max(1, int(math.ceil(p * x.size - 1e-9)))
        out.append((p, float(x[rank - 1])))
    return out


def classification_accuracy(decisions: Sequence[tuple[bool, bool]]) -> float:
    """Fraction of (predicted, actual) pairs that agree."""
    if not decisions:
        return math.nan
    return sum(p == a for p, a in decisions) / len(decisions)
