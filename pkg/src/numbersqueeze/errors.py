"""Exception types shared across the package.

Each class maps to a distinct CLI exit code (see :mod:`numbersqueeze.cli`).
"""


class NumberSqueezeError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(NumberSqueezeError, ValueError):
    exit_code = 2


class ConvergenceError(NumberSqueezeError, RuntimeError):
    """A solver or integrator failed to reach its target.

    ``residual`` carries the last residual norm when one is available.
    """

    exit_code = 3

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class StepSizeError(ConvergenceError):
    pass


class DegenerateKernelError(ConvergenceError):
    pass


class TruncationError(NumberSqueezeError, RuntimeError):
    exit_code = 4


class DimensionCapError(NumberSqueezeError, MemoryError):
    exit_code = 5
