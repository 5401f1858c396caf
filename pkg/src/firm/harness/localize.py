"""Localization accuracy: train the culprit classifier on one campaign, score a held-out one."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields

import numpy as np

from firm.anomaly import US_PER_S, Campaign, CampaignParams, schedule_campaign
from firm.extractor import LabeledCandidate, SvmModel, collect_candidates, fit_svm
from firm.harness.metrics import DegenerateLabels, RocCurve, classification_accuracy, compute_roc, confusion_sweep
from firm.rng import substream
from firm.sim.scenario import Scenario

LOCALIZE_MODES = ("single", "multi")


@dataclass
class LocalizeConfig:
    train_horizon: int = 600
    eval_horizon: int = 600
    epochs: int = 20
    window_s: int = 30
    ri_mode: str = "pcc"
    labels: str = "effective"
    svm: dict = field(default_factory=dict)  # SvmModel.init keyword overrides
    campaign: dict = field(default_factory=dict)  # CampaignParams overrides; "mode" is set per run

    @classmethod
    def from_dict(cls, d: dict | None) -> LocalizeConfig:
        d = dict(d or {})
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown localization settings: {sorted(unknown)}")
        return cls(**d)


@dataclass
class LocalizeResult:
    mode: str
    injections: int
    train_candidates: list[LabeledCandidate]
    eval_candidates: list[LabeledCandidate]
    model: SvmModel
    roc: RocCurve | None

    @property
    def positives(self) -> int:
        return sum(c.label for c in self.eval_candidates)

    @property
    def accuracy(self) -> float:
        return classification_accuracy([(c.score > self.model.threshold, c.label) for c in self.eval_candidates])

    def rates_at_threshold(self) -> tuple[float, float]:
        """(TPR, FPR) at the model's own decision threshold; NaN where undefined."""
        tp = sum(c.label and c.score > self.model.threshold for c in self.eval_candidates)
        fp = sum(not c.label and c.score > self.model.threshold for c in self.eval_candidates)
        pos = self.positives
        neg = len(self.eval_candidates) - pos
        return (tp / pos if pos else math.nan, fp / neg if neg else math.nan)

    def summary(self) -> dict:
        tpr, fpr = self.rates_at_threshold()
        return {
            "mode": self.mode,
            "injections": self.injections,
            "train_candidates": len(self.train_candidates),
            "eval_candidates": len(self.eval_candidates),
            "positives": self.positives,
            "accuracy": _num(self.accuracy),
            "tpr": _num(tpr),
            "fpr": _num(fpr),
            "auc": _num(self.roc.auc) if self.roc else "n/a",
            "tpr_at_fpr_0.2": _num(self.roc.best_tpr(0.2)) if self.roc else "n/a",
        }

    def write_sweep(self, fh) -> None:
        fh.write("threshold,tp,fp,tn,fn,tpr,fpr\n")
        for p in confusion_sweep([(c.score, c.label) for c in self.eval_candidates]):
            fh.write(f"{p.threshold!r},{p.tp},{p.fp},{p.tn},{p.fn},{_num(p.tpr)},{_num(p.fpr)}\n")

    def write_candidates(self, fh) -> None:
        for c in self.eval_candidates:
            fh.write(json.dumps({"t": c.t, "trace_id": c.trace_id, "instance_id": c.instance_id, "RI": c.ri,
                                 "CI": c.ci, "score": c.score, "decision": c.score > self.model.threshold,
                                 "label": c.label}, sort_keys=True) + "\n")


def _num(x: float):
    return "n/a" if isinstance(x, float) and math.isnan(x) else x


def localization_campaign(scenario: Scenario, seed: int, phase: str, mode: str, horizon: int,
                          cfg: LocalizeConfig) -> Campaign:
    if mode not in LOCALIZE_MODES:
        raise ValueError(f"mode must be one of {LOCALIZE_MODES}")
    params = CampaignParams.from_dict({**cfg.campaign, "mode": mode})
    # the first 10 s stay quiet so the latency window holds a baseline
    return schedule_campaign(params, horizon * US_PER_S, scenario.instance_ids, substream(seed, "localize", phase, mode),
                             seed=seed, start_offset=10 * US_PER_S)


def run_localization(scenario: Scenario, seed: int, mode: str, cfg: LocalizeConfig | None = None,
                     eval_campaign: Campaign | None = None, model: SvmModel | None = None) -> LocalizeResult:
    """Fit on a training campaign (unless ``model`` is given), then score a held-out campaign."""
    cfg = cfg or LocalizeConfig()
    if model is None:
        model = SvmModel.init(substream(seed, "svm_init"), **cfg.svm)
        train_camp = localization_campaign(scenario, seed, "train", mode, cfg.train_horizon, cfg)
        sim_seed = int(substream(seed, "localize_sim", "train", mode).integers(2**63))
        train = collect_candidates(scenario, sim_seed, train_camp, cfg.train_horizon, model, cfg.window_s, cfg.ri_mode, cfg.labels)
        fit_svm(model, train, cfg.epochs, substream(seed, "svm_fit"))
    else:
        train = []
    if eval_campaign is None:
        eval_campaign = localization_campaign(scenario, seed, "eval", mode, cfg.eval_horizon, cfg)
    sim_seed = int(substream(seed, "localize_sim", "eval", mode).integers(2**63))
    held_out = collect_candidates(scenario, sim_seed, eval_campaign, cfg.eval_horizon, model, cfg.window_s, cfg.ri_mode, cfg.labels)
    try:
        roc = compute_roc([(c.score, c.label) for c in held_out])
    except DegenerateLabels:
        roc = None
    return LocalizeResult(mode, len(eval_campaign.injections), train, held_out, model, roc)


def train_localizer(scenario: Scenario, seed: int, cfg: LocalizeConfig | None = None, mode: str = "multi") -> SvmModel:
    """A classifier for the control loop, fit on one seeded training campaign."""
    cfg = cfg or LocalizeConfig()
    model = SvmModel.init(substream(seed, "svm_init"), **cfg.svm)
    camp = localization_campaign(scenario, seed, "train", mode, cfg.train_horizon, cfg)
    sim_seed = int(substream(seed, "localize_sim", "train", mode).integers(2**63))
    data = collect_candidates(scenario, sim_seed, camp, cfg.train_horizon, model, cfg.window_s, cfg.ri_mode, cfg.labels)
    return fit_svm(model, data, cfg.epochs, substream(seed, "svm_fit"))


def mean_or_nan(x) -> float:
    return float(np.mean(x)) if len(x) else math.nan
