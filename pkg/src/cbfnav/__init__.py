"""Decentralised multi-agent navigation with CLF-CBF-QP controllers whose
barrier parameters are tuned online by a message-passing policy."""

__version__ = "0.1.0"

from ._backend import BACKEND
from .controller import LocalView, SafetyViolation, compute_control
from .qp import QpProblem, QpSolution, QpStatus, kkt_residual, solve_qp
from .scenarios import ScenarioKind, make_scenario
from .sim import Trajectory, check_safety, run_episode
from .types import (AgentSpec, AgentState, CbfParams, ConfigError, ControllerConfig, ObstacleSpec,
                    ParamBounds, WorldConfig, Workspace, load_config, validate_config)

__all__ = [
    "BACKEND", "LocalView", "SafetyViolation", "compute_control", "QpProblem", "QpSolution",
    "QpStatus", "kkt_residual", "solve_qp", "ScenarioKind", "make_scenario", "Trajectory",
    "check_safety", "run_episode", "AgentSpec", "AgentState", "CbfParams", "ConfigError",
    "ControllerConfig", "ObstacleSpec", "ParamBounds", "WorldConfig", "Workspace", "load_config",
    "validate_config",
]
