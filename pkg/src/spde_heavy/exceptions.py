"""Exception types raised across the package."""


class ConfigError(ValueError):
    """Invalid user configuration (bad keys, values or combinations)."""


class AdmissibilityError(ConfigError):
    """Exponents, kernel and noise do not satisfy the integrability window."""


class HypothesisViolation(ConfigError):
    """A study was requested for a configuration that violates the hypotheses the study relies on."""


class GuardBandError(ValueError):
    """An atom or evaluation point lies outside the interpolation hull of a field."""


class GridMismatchError(ValueError):
    """Fields in an ensemble do not share the same grid."""


class QuadratureError(RuntimeError):
    """Deterministic quadrature failed its self-consistency check."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class ConvergenceError(RuntimeError):
    """Picard iteration did not reach the tolerance within ``max_iter`` steps."""

    def __init__(self, message, increments=()):
        super().__init__(message)
        self.increments = list(increments)


class InsufficientLevelError(RuntimeError):
    """The largest truncation level stops before the end of the time window."""
