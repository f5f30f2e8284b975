"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: :class:`DataError` -> 3,
:class:`NumericalError` (and subclasses) -> 4.
"""


class HdmedError(Exception):
    """Base class for all package errors."""


class DataError(HdmedError, ValueError):
    """Malformed input: dimension mismatch, non-finite values, too few rows."""


class SingularMatrixError(DataError):
    """A moment matrix that must be inverted is (numerically) singular."""


class NumericalError(HdmedError, ArithmeticError):
    """An internal numerical check failed."""


class ConvergenceError(NumericalError):
    """An iterative solver hit its iteration cap."""


class InfeasibleError(NumericalError):
    """A constrained l1 row problem has no feasible point.

    Attributes
    ----------
    min_residual : float
        Smallest achievable ``max|sigma @ w - d|``; any ``tau`` at or above
        this value makes the row feasible.
    """

    def __init__(self, message, min_residual=float("nan")):
        super().__init__(message)
        self.min_residual = min_residual
