"""Exception hierarchy.

Numerical failures map to CLI exit code 1, configuration problems to exit
code 2.
"""


class CentroidQfiError(Exception):
    """Base class for all package errors."""


class NumericalError(CentroidQfiError):
    """A computation failed to reach its stated accuracy."""


class QuadratureError(NumericalError):
    def __init__(self, message, error_estimate=None):
        super().__init__(message)
        self.error_estimate = error_estimate


class TruncationError(NumericalError):
    """The Hermite-Gaussian basis is too small for the scene."""

    def __init__(self, message, deficit=None, q_max=None):
        super().__init__(message)
        self.deficit = deficit
        self.q_max = q_max


class ConvergenceError(NumericalError):
    def __init__(self, message, iterates=None):
        super().__init__(message)
        self.iterates = iterates


class ModelDataMismatch(NumericalError):
    """Observed outcomes have zero probability everywhere in the search box."""


class ConfigError(CentroidQfiError, ValueError):
    """Invalid scene, sweep or experiment configuration."""
