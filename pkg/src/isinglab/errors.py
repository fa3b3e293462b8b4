"""Exception hierarchy shared by every module.

The CLI maps ``ParameterError`` to exit code 2 and ``NumericalError`` to 3.
"""


class IsingLabError(Exception):
    """Base class for all package errors."""


class ParameterError(IsingLabError, ValueError):
    """Invalid user-supplied parameter."""


class CapacityError(IsingLabError):
    """Problem too large for an exact (enumeration / ODE) method."""


class DomainError(IsingLabError, ValueError):
    """Input outside the mathematical domain of an operation."""


class NumericalError(IsingLabError, ArithmeticError):
    """Numerical failure: singular matrix, divergence, etc.

    ``diagnostics`` carries whatever was computed before the failure.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
