from aspen.simnet.faults import FaultConfigError, FaultKind, FaultSpec
from aspen.simnet.scenario import Scenario, WorkloadSpec, load_scenario, parse_scenario
from aspen.simnet.sim import ClockSkew, DelayKind, LinkModel, Simulator

__all__ = [
    "ClockSkew",
    "DelayKind",
    "FaultConfigError",
    "FaultKind",
    "FaultSpec",
    "LinkModel",
    "Scenario",
    "Simulator",
    "WorkloadSpec",
    "load_scenario",
    "parse_scenario",
]
