"""Exception types shared across the package."""


class SsnnlsError(Exception):
    """Base class for package-specific failures."""


class ConfigError(SsnnlsError):
    """Invalid or inconsistent configuration (bad shapes are ValueError instead)."""


class NonConvergenceError(SsnnlsError):
    """An iterative solver hit its iteration cap before reaching tolerance.

    Carries enough state to diagnose the run.
    """

    def __init__(self, message, iterations=None, residuals=None, trace=None):
        super().__init__(message)
        self.iterations = iterations
        self.residuals = residuals
        self.trace = trace


class DegenerateColumnError(SsnnlsError):
    """A dictionary column is identically zero (or numerically so)."""
