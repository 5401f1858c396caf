"""Incremental kernel SVM: random Fourier features plus SGD on the hinge loss."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SVM_VERSION = 1
N_FEATURES = 2  # (RI, CI)


class NonFiniteFeature(ValueError):
    pass


class CorruptModel(ValueError):
    pass


@dataclass
class RunningStats:
    """Welford mean/variance per input feature."""

    count: int = 0
    mean: np.ndarray = field(default_factory=lambda: np.zeros(N_FEATURES))
    m2: np.ndarray = field(default_factory=lambda: np.zeros(N_FEATURES))

    def push(self, x: np.ndarray) -> None:
        self.count += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.count
        self.m2 = self.m2 + delta * (x - self.mean)

    @property
    def std(self) -> np.ndarray:
        if self.count < 2:
            return np.ones_like(self.mean)
        sd = np.sqrt(self.m2 / (self.count - 1))
        return np.where(sd > 1e-12, sd, 1.0)

    def standardize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std


@dataclass
class SvmModel:
    rff_weights: np.ndarray  # (D, 2)
    rff_offsets: np.ndarray  # (D,)
    weights: np.ndarray  # (D,)
    bias: float
    gamma: float = 1.0
    lr: float = 0.01
    reg: float = 1e-4
    threshold: float = 0.0
    stats: RunningStats = field(default_factory=RunningStats)
    update_count: int = 0
    standardize: bool = True

    @property
    def D(self) -> int:
        return len(self.weights)

    @classmethod
    def init(cls, rng: np.random.Generator, D: int = 256, gamma: float = 1.0, lr: float = 0.01,
             reg: float = 1e-4, bias: float = -1.0, standardize: bool = True) -> SvmModel:
        # exp(-gamma |x - y|^2) has spectral density N(0, 2 gamma I)
        w = rng.normal(0.0, math.sqrt(2.0 * gamma), size=(D, N_FEATURES))
        b = rng.uniform(0.0, 2.0 * math.pi, size=D)
        return cls(w, b, np.zeros(D), float(bias), gamma, lr, reg, standardize=standardize)

    def _input(self, ri: float, ci: float) -> np.ndarray:
        x = np.array([ri, ci], dtype=float)
        if not np.all(np.isfinite(x)):
            raise NonFiniteFeature(f"non-finite feature (RI={ri}, CI={ci})")
        return x

    def features(self, x: np.ndarray) -> np.ndarray:
        """z(x) with E[z(x)·z(y)] = exp(-gamma |x - y|^2); ``x`` is already standardized."""
        return math.sqrt(2.0 / self.D) * np.cos(self.rff_weights @ x + self.rff_offsets)

    def decision(self, ri: float, ci: float) -> float:
        x = self._input(ri, ci)
        if self.standardize:
            x = self.stats.standardize(x)
        return float(self.weights @ self.features(x) + self.bias)

    def to_dict(self) -> dict:
        return {
            "version": SVM_VERSION,
            "D": self.D,
            "gamma": self.gamma,
            "lr": self.lr,
            "reg": self.reg,
            "threshold": self.threshold,
            "standardize": self.standardize,
            "rff_weights": self.rff_weights.ravel().tolist(),
            "rff_offsets": self.rff_offsets.tolist(),
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "update_count": self.update_count,
            "feature_stats": {"count": self.stats.count, "mean": self.stats.mean.tolist(), "m2": self.stats.m2.tolist()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> SvmModel:
        if d.get("version") != SVM_VERSION:
            raise CorruptModel(f"unsupported SVM checkpoint version {d.get('version')!r}")
        try:
            D = int(d["D"])
            fs = d["feature_stats"]
            model = cls(
                rff_weights=np.asarray(d["rff_weights"], float).reshape(D, N_FEATURES),
                rff_offsets=np.asarray(d["rff_offsets"], float).reshape(D),
                weights=np.asarray(d["weights"], float).reshape(D),
                bias=float(d["bias"]),
                gamma=float(d["gamma"]),
                lr=float(d.get("lr", 0.01)),
                reg=float(d.get("reg", 1e-4)),
                threshold=float(d.get("threshold", 0.0)),
                stats=RunningStats(int(fs["count"]), np.asarray(fs["mean"], float), np.asarray(fs["m2"], float)),
                update_count=int(d.get("update_count", 0)),
                standardize=bool(d.get("standardize", True)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptModel(f"malformed SVM checkpoint: {exc}") from exc
        return model

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> SvmModel:
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise CorruptModel(f"{path}: {exc}") from exc
        return cls.from_dict(d)


def svm_classify(model: SvmModel, ri: float, ci: float) -> bool:
    return model.decision(ri, ci) > model.threshold


def svm_update(model: SvmModel, ri: float, ci: float, label: bool) -> SvmModel:
    """One SGD step on reg/2 |w|^2 + max(0, 1 - y (w·z + b)); updates ``model`` in place."""
    x = model._input(ri, ci)
    if model.standardize:
        model.stats.push(x)
        x = model.stats.standardize(x)
    z = model.features(x)
    y = 1.0 if label else -1.0
    margin = y * (float(model.weights @ z) + model.bias)
    grad_w = model.reg * model.weights
    grad_b = 0.0
    if margin < 1.0:
        grad_w = grad_w - y * z
        grad_b = -y
    model.weights = model.weights - model.lr * grad_w
    model.bias -= model.lr * grad_b
    model.update_count += 1
    return model
