"""Exception types shared across the toolkit."""

from __future__ import annotations


class BeamschedError(Exception):
    """Base class for all toolkit errors."""


class NoConvergence(BeamschedError):
    """An iterative solver hit its iteration cap before reaching tolerance."""

    def __init__(self, message: str, residual: float = float("nan"), iterations: int = -1):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class SingularSystem(BeamschedError):
    """A direct linear solve met a pivot below the configured guard."""


class DegenerateChain(BeamschedError):
    """The induced Markov chain has no usable stationary behavior.

    Raised when the passive set covers the whole state space, so the
    queue absorbs at the buffer limit.
    """


class BracketFailure(BeamschedError):
    """Bisection could not bracket a sign change within the expanded range."""


class ConfigError(BeamschedError):
    """Base class for configuration-file problems."""


class ParseError(ConfigError):
    """Input file is not syntactically valid or has unknown fields."""


class ValidationError(ConfigError):
    """Input parsed but violates a documented invariant."""
