from firm.sim.cluster import (
    InstanceState,
    ScaleIn,
    ScaleOut,
    SetLimit,
    Simulator,
    StepResult,
    Trace,
    UnknownInstance,
    ZeroAvailability,
    service_time,
    slowdown_factor,
)
from firm.sim.scenario import ConfigError, Scenario, builtin_scenario, load_scenario, parse_scenario
from firm.sim.telemetry import InstanceTelemetry, TelemetrySnapshot
from firm.sim.workload import generate_arrivals

__all__ = [
    "ConfigError",
    "InstanceState",
    "InstanceTelemetry",
    "ScaleIn",
    "ScaleOut",
    "Scenario",
    "SetLimit",
    "Simulator",
    "StepResult",
    "TelemetrySnapshot",
    "Trace",
    "UnknownInstance",
    "ZeroAvailability",
    "builtin_scenario",
    "generate_arrivals",
    "load_scenario",
    "parse_scenario",
    "service_time",
    "slowdown_factor",
]
