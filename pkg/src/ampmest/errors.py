"""Exception types raised by the solvers.

Each class also derives from the builtin it refines, so callers that only
care about ``ValueError`` or ``RuntimeError`` keep working.
"""

from __future__ import annotations

from typing import Any


class AmpMestError(Exception):
    """Base class for all package errors."""


class BracketError(AmpMestError, ValueError):
    """A root finder was given an interval without a sign change."""


class RankError(AmpMestError, ValueError):
    """A design matrix is rank deficient."""


class MatrixError(AmpMestError, ValueError):
    """A matrix argument is not symmetric positive definite."""


class PreconditionError(AmpMestError, ValueError):
    """An input violates the documented precondition of an operation."""


class UndefinedFisherError(AmpMestError, ValueError):
    """Fisher information requested for a distribution without a density."""


class ConvergenceError(AmpMestError, RuntimeError):
    """An inner scalar iteration failed to converge."""


class CalibrationError(AmpMestError, RuntimeError):
    """No effective-score parameter b matches the requested slope."""


class SolverError(AmpMestError, RuntimeError):
    """An outer optimization routine failed to converge."""


class FixedPointError(AmpMestError, RuntimeError):
    """The state evolution fixed point could not be located."""

    def __init__(self, msg: str, trajectory: list[Any] | None = None) -> None:
        """Store the partial trajectory alongside the message.

        Args:
            msg: the error message
            trajectory: the states visited before giving up
        """
        super().__init__(msg)
        self.trajectory = trajectory or []
