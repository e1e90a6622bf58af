"""Exception hierarchy.

The CLI maps these onto exit codes: ``ParameterDomainError`` is a usage
problem (1); the numerical family maps to 2.
"""


class FSBGLError(Exception):
    pass


class ParameterDomainError(FSBGLError, ValueError):
    """A parameter is outside its admissible domain."""


class NumericalError(FSBGLError, ArithmeticError):
    pass


class NotPositiveDefiniteError(NumericalError):
    """A matrix that must be positive definite failed to factorize."""


class NumericalDomainError(NumericalError):
    pass


class InfeasibleProblemError(NumericalError):
    pass


class NonConvergenceError(NumericalError):
    """Iteration cap reached. ``best`` carries the best iterate seen."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class SearchFailureError(NumericalError):
    def __init__(self, message, last_feasible=None):
        super().__init__(message)
        self.last_feasible = last_feasible


class OracleScaleError(FSBGLError, ValueError):
    """Dense oracle evaluation requested on a problem that is too large."""
