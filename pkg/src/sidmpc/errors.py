"""Shared exception types.

The CLI maps these onto process exit codes: ConfigError -> 1,
NumericalError (and subclasses) -> 2, I/O problems -> 3.
"""


class SidmpcError(Exception):
    """Base class for all package errors."""


class ConfigError(SidmpcError):
    """Invalid configuration (bad section, key, or value)."""


class NumericalError(SidmpcError):
    """A numerical procedure failed (rank loss, divergence, no convergence)."""


class ConvergenceError(NumericalError):
    """Iteration cap reached before the tolerance was met."""

    def __init__(self, message, residual=None, iterate=None):
        super().__init__(message)
        self.residual = residual
        self.iterate = iterate


class InfeasibleError(NumericalError):
    """The constraint set of a QP admits no point."""


class DivergenceError(NumericalError):
    """Simulated state left the finite range."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t
