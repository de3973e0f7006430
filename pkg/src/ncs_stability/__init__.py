"""Stability certificates for nonlinear control loops closed over delaying networks."""

from .analyzer import (
    BoundSearchResult,
    LyapunovCertificate,
    SystemBounds,
    build_certificate,
    check_stability,
    max_delay_bound,
    robot_bounds,
    synthesize_lyapunov,
)
from .lmi import LmiProblem, VariableLayout, export_sdpa
from .robot import RobotParams, StateDomain, closed_loop_f, estimate_Mk, verify_assumptions
from .sdp import SdpVerdict, SolverConfig, maximize_linear, solve_feasibility
from .sim import NetworkScenario, generate_delays, integrate, stability_metrics

__version__ = "0.1.0"

__all__ = [
    "BoundSearchResult",
    "LmiProblem",
    "LyapunovCertificate",
    "NetworkScenario",
    "RobotParams",
    "SdpVerdict",
    "SolverConfig",
    "StateDomain",
    "SystemBounds",
    "VariableLayout",
    "build_certificate",
    "check_stability",
    "closed_loop_f",
    "estimate_Mk",
    "export_sdpa",
    "generate_delays",
    "integrate",
    "max_delay_bound",
    "maximize_linear",
    "robot_bounds",
    "solve_feasibility",
    "stability_metrics",
    "synthesize_lyapunov",
    "verify_assumptions",
]
