"""Experiment orchestration, metrics and the command-line entry point."""
from firm.harness.metrics import DegenerateLabels, RocCurve, RocPoint, compute_roc, confusion_sweep, latency_cdf

__all__ = ["DegenerateLabels", "RocCurve", "RocPoint", "compute_roc", "confusion_sweep", "latency_cdf"]
