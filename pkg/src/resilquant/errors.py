"""Exception types shared across the package.

Every error raised by library code derives from ResilquantError so callers
(and the CLI) can separate expected failure modes from genuine bugs.
"""

from __future__ import annotations


class ResilquantError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(ResilquantError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class RangeError(ResilquantError, ValueError):
    """A time or index falls outside the span of a series or profile."""


class IntegrationError(ResilquantError):
    """The ODE integrator produced a non-finite derivative or state."""


class ConvergenceError(ResilquantError):
    """An iterative solver failed to converge.

    Carries the best iterate seen and its residual norm so callers can
    inspect how close the solver got.
    """

    def __init__(self, message: str, best=None, norm: float | None = None):
        super().__init__(message)
        self.best = best
        self.norm = norm


class AlignmentError(ResilquantError, ValueError):
    """Two series that must share a sampling grid do not."""


class DegenerateBaselineError(ResilquantError, ValueError):
    """A baseline curve is non-positive somewhere; carries the first index."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class InsufficientDataError(ResilquantError, ValueError):
    """Too few samples for the requested operation."""


class NoRecoveryError(ResilquantError):
    """The curve is monotone to its boundary: no interior minimum exists."""


class FitInfeasibleError(ResilquantError):
    """A fast-fit equation has no root inside the admissible bracket."""


class NoAttackDetectedError(ResilquantError):
    """No persistent drop below the detection threshold was found."""


class PairingError(ResilquantError):
    """An attack cell has no baseline cell with matching condition fields."""


class UndefinedSteadyStateError(ResilquantError, ValueError):
    """Steady state requested with M + B = 0."""


class UnsupportedCoefficientsError(ResilquantError, ValueError):
    """Linear-model coefficients outside the supported closed-form family."""


class ConfigError(ResilquantError, ValueError):
    """A config file or design description is invalid or empty."""
