"""Exception types raised by the solver.

Numerical failures derive from :class:`NumericalError` so the command line can
map them to a distinct exit code; bad user input raises :class:`ConfigError`.
"""


class DDFTError(Exception):
    """Base class for all package errors."""


class ConfigError(DDFTError, ValueError):
    """Malformed or inadmissible run configuration."""

    def __init__(self, message, key=None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key


class NumericalError(DDFTError, ArithmeticError):
    """A solver could not produce a result."""


class SingularTensor(NumericalError):
    pass


class NotPositiveDefinite(NumericalError):
    pass


class NoConvergence(NumericalError):
    def __init__(self, message, residual=None, history=None):
        super().__init__(message)
        self.residual = residual
        self.history = list(history) if history is not None else []


class MaxIterations(NoConvergence):
    pass


class LinearSolveFailure(NumericalError):
    pass


class EnergyGuardExhausted(NumericalError):
    pass


class PositivityLoss(NumericalError):
    def __init__(self, message, min_rho=None):
        super().__init__(message)
        self.min_rho = min_rho
