"""The closed control loop and the baseline policies it is compared against."""
from firm.controller.experiment import ExperimentResult, experiment_campaign, make_policy, run_experiment
from firm.controller.mitigation import MitigationEpisodeRecord, MitigationTracker, mitigation_time
from firm.controller.policies import (
    POLICY_NAMES,
    AimdController,
    AimdParams,
    FirmParams,
    FirmPolicy,
    K8sAutoscaler,
    K8sParams,
    NoPolicy,
    PolicyParams,
    StepDecision,
)

__all__ = [
    "POLICY_NAMES", "AimdController", "AimdParams", "ExperimentResult", "FirmParams", "FirmPolicy", "K8sAutoscaler",
    "K8sParams", "MitigationEpisodeRecord", "MitigationTracker", "NoPolicy", "PolicyParams", "StepDecision",
    "experiment_campaign", "make_policy", "mitigation_time", "run_experiment",
]
