"""Supervised data for the culprit classifier, gathered from injected campaigns."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from firm.anomaly import Campaign
from firm.extractor.pipeline import Extractor
from firm.extractor.svm import SvmModel, svm_update
from firm.sim.cluster import Simulator
from firm.sim.scenario import Scenario


# "effective": the injection is perturbing the instance right now; "targets": any active injection
LABEL_SOURCES = ("effective", "targets")


@dataclass(frozen=True)
class LabeledCandidate:
    t: int
    trace_id: str
    instance_id: str
    ri: float
    ci: float
    score: float
    label: bool  # ground truth at t, see ``LABEL_SOURCES``


def collect_candidates(scenario: Scenario, seed: int, campaign: Campaign, horizon: int,
                       model: SvmModel, window_s: int = 30, ri_mode: str = "pcc",
                       labels: str = "effective") -> list[LabeledCandidate]:
    """Run ``campaign`` with no controller and label every scored candidate by ground truth."""
    if labels not in LABEL_SOURCES:
        raise ValueError(f"labels must be one of {LABEL_SOURCES}")
    sim = Simulator(scenario, seed, campaign)
    ex = Extractor(scenario.slos, model, window_s, ri_mode)
    out = []
    for t in range(horizon):
        res = sim.step()
        truth = res.effective_targets if labels == "effective" else res.anomaly_targets
        ex.observe(t, res.traces)
        for c in ex.localize(t, res.traces, res.telemetry):
            out.append(LabeledCandidate(t, c.trace_id, c.instance_id, c.ri, c.ci, c.score, c.instance_id in truth))
    return out


def fit_svm(model: SvmModel, data: list[LabeledCandidate], epochs: int, rng: np.random.Generator) -> SvmModel:
    """Shuffled passes of incremental updates over ``data``."""
    for _ in range(epochs):
        for i in rng.permutation(len(data)):
            d = data[i]
            svm_update(model, d.ri, d.ci, d.label)
    return model
