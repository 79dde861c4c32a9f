"""Photon number squeezing from number-dependent reservoir rates.

Submodules
----------
fock         truncated bosonic operators and density matrices
rates        reservoir rate laws, optomechanical scales and estimators
populations  birth-death dynamics, classical feedback, reduced optomechanics
lindblad     Liouvillian assembly, evolution and steady states
experiments  config-driven runs and table output (used by the CLI)
"""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    ConfigError,
    ConvergenceError,
    DegenerateKernelError,
    DimensionCapError,
    NumberSqueezeError,
    StepSizeError,
    TruncationError,
)
