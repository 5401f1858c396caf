"""Level-one localization: critical paths, features and the culprit classifier."""
from firm.extractor.critical_path import CriticalPath, exclusive_latencies, extract_critical_path
from firm.extractor.features import (
    DegenerateVariance,
    EmptyWindow,
    InsufficientSamples,
    congestion_intensity,
    detect_slo_violation,
    relative_importance,
)
from firm.extractor.pipeline import (
    CandidateScore,
    Extractor,
    LatencyWindow,
    PathRecord,
    culprits,
    extract_critical_components,
    instance_features,
    write_candidates,
)
from firm.extractor.svm import CorruptModel, NonFiniteFeature, SvmModel, svm_classify, svm_update
from firm.extractor.training import LabeledCandidate, collect_candidates, fit_svm

__all__ = [
    "CandidateScore", "CorruptModel", "CriticalPath", "DegenerateVariance", "EmptyWindow", "Extractor",
    "InsufficientSamples", "LabeledCandidate", "LatencyWindow", "NonFiniteFeature", "PathRecord", "SvmModel",
    "collect_candidates", "congestion_intensity", "culprits", "detect_slo_violation", "exclusive_latencies",
    "extract_critical_components", "extract_critical_path", "fit_svm", "instance_features", "relative_importance",
    "svm_classify", "svm_update", "write_candidates",
]
