"""Multi-agent coverage with battery recharging: simulation and IPA-based
optimisation of the recharge thresholds."""

from .agent import (AgentMode, AgentState, EventKind, GuardEvent, guard12_residual,
                    guard23_residual, guard31_residual, locate_event, mode1_field,
                    mode2_field, mode3_field)
from .config import FeasibilityWarning, SimConfig, load_config
from .coverage import (MissionSpace, SensorModel, coverage_gradient, coverage_value,
                       heading_from_gradient, joint_detection, second_derivatives,
                       sensing_probability)
from .errors import (ConfigError, EvaluationError, HybridCoverError, InfeasibleError,
                     SchedulingError, SingularEventError)
from .export import ExportError, export, load_summary, summary
from .gradcheck import GradientReport, check_gradient
from .ipa import IpaDerivatives, IpaMode
from .optimizer import AscentConfig, IterationRecord, evaluate, optimize, update_theta
from .scheduler import ChargingRequest, ChargingStation, Policy, Reservation
from .simulation import RunRecord, Simulation, run_simulation

from ._version import __version__

__all__ = [
    "AgentMode", "AgentState", "EventKind", "GuardEvent", "guard12_residual",
    "guard23_residual", "guard31_residual", "locate_event", "mode1_field",
    "mode2_field", "mode3_field", "FeasibilityWarning", "SimConfig", "load_config",
    "MissionSpace", "SensorModel", "coverage_gradient", "coverage_value",
    "heading_from_gradient", "joint_detection", "second_derivatives",
    "sensing_probability", "ConfigError", "HybridCoverError", "InfeasibleError",
    "SchedulingError", "SingularEventError", "IpaDerivatives", "IpaMode",
    "ChargingRequest", "ChargingStation", "Policy", "Reservation", "RunRecord",
    "Simulation", "run_simulation", "EvaluationError", "ExportError", "export",
    "load_summary", "summary", "GradientReport", "check_gradient", "AscentConfig",
    "IterationRecord", "evaluate", "optimize", "update_theta", "__version__",
]
