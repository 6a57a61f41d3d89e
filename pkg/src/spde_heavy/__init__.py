"""Mild solutions of heat-type SPDEs driven by heavy-tailed Levy noise on unbounded domains."""
from .exceptions import (
    AdmissibilityError,
    ConfigError,
    ConvergenceError,
    GridMismatchError,
    GuardBandError,
    HypothesisViolation,
    InsufficientLevelError,
    QuadratureError,
)
from .kernels import (
    ExponentPair,
    KernelSpec,
    admissible,
    eta_window,
    kernel_density,
    kernel_lp_norm,
    picard_decay_bound,
    power_rescaling,
    q_threshold,
)
from .estimators import EnsembleConfig, StudyReport, empirical_bp_norm
from .noise import (
    BEYOND_WINDOW,
    AdaptiveTruncation,
    JumpSizeTruncation,
    LevyMarkSpec,
    LevyNoiseSampler,
    NoiseRealization,
    StoppingConfig,
    SupportRestriction,
    sample_noise,
    stopping_time,
    truncate_adaptive,
)
from .solver import FieldGrid, PicardSolver, ProblemSpec, Sigma, glue, initial_field, picard_step, solve

__version__ = "0.1.0"

__all__ = [
    "AdaptiveTruncation", "AdmissibilityError", "BEYOND_WINDOW", "ConfigError", "ConvergenceError",
    "EnsembleConfig", "ExponentPair", "FieldGrid", "GridMismatchError", "GuardBandError", "HypothesisViolation",
    "InsufficientLevelError", "JumpSizeTruncation", "KernelSpec", "LevyMarkSpec", "LevyNoiseSampler",
    "NoiseRealization", "PicardSolver", "ProblemSpec", "QuadratureError", "Sigma", "StoppingConfig",
    "StudyReport", "SupportRestriction", "admissible", "empirical_bp_norm", "eta_window", "glue", "initial_field", "kernel_density", "kernel_lp_norm",
    "picard_decay_bound", "picard_step", "power_rescaling", "q_threshold", "sample_noise", "solve",
    "stopping_time", "truncate_adaptive",
]
