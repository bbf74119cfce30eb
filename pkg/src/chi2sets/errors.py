"""Exception types shared across the package."""

from __future__ import annotations


class Chi2SetsError(Exception):
    """Base class for all package errors."""


class InvalidInputError(Chi2SetsError, ValueError):
    """An argument violates a documented precondition."""


class SingularMatrixError(Chi2SetsError):
    """A matrix required to be invertible is singular at the working rcond.

    Carries ``condition_estimate`` (largest/smallest eigenvalue or singular
    value ratio, ``inf`` when the smallest is zero).
    """

    def __init__(self, message: str, condition_estimate: float = float("inf")):
        super().__init__(message)
        self.condition_estimate = condition_estimate


class DegenerateFitError(Chi2SetsError):
    """The residual scale fell below the solver floor (interpolation regime).

    ``last_fit`` holds the final iterate for diagnosis.
    """

    def __init__(self, message: str, last_fit=None):
        super().__init__(message)
        self.last_fit = last_fit


class ConvergenceError(Chi2SetsError):
    """The solver hit its iteration cap before reaching the fixpoint tolerance.

    ``last_fit`` holds the final iterate for diagnosis.
    """

    def __init__(self, message: str, last_fit=None):
        super().__init__(message)
        self.last_fit = last_fit


class InternalConsistencyError(Chi2SetsError):
    """An algebraic identity that must hold exactly failed.

    This signals a solver or certification bug, not a statistical event.
    """


class UnboundedSetError(Chi2SetsError):
    """A confidence ellipsoid is unbounded (normalization matrix is rank-deficient)."""
