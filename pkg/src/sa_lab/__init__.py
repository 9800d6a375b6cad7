"""Finite-time rate experiments for stochastic approximation under Lyapunov stability."""

from .core import (
    ConvergenceError,
    DomainError,
    LyapunovSpec,
    NonFiniteError,
    ProblemSpec,
    Regime,
    SALabError,
    SearchError,
    SmoothingSchedule,
    StepSchedule,
    VerificationError,
    compute_K,
    step_size,
    smoothing_param,
    validate_step_conditions,
)
from .engine import EnsembleStats, NoiseModel, ProjectionConfig, run_ensemble, run_trajectory
from .systems import artstein_system, get_system, khalil_system, selector_system

__version__ = "0.1.0"
