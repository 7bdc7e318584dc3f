"""Exception hierarchy for lmeselect."""


class LmeSelectError(Exception):
    """Base class for all lmeselect errors."""


class ProblemFormatError(LmeSelectError):
    """Structural problem with input data: bad dimensions, missing fields,
    non-PD noise covariance, unparsable files."""


class DomainError(LmeSelectError, ValueError):
    """An argument is outside the mathematical domain of an operation
    (negative variance, nonpositive barrier weight, eta below threshold)."""


class NumericalError(LmeSelectError):
    """A factorization failed on data that should have been well posed."""


class SolverError(LmeSelectError):
    """A linear solve inside the Newton iteration failed."""


class ConvergenceError(LmeSelectError):
    """An iterative method exhausted its budget without reaching tolerance.

    Carries the best state seen so far in ``best`` when available.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
