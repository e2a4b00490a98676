"""Exception hierarchy shared by all modules."""


class RBDSDEError(Exception):
    """Base class for every error raised by the package."""


class InvalidCoefficient(RBDSDEError):
    """A coefficient, terminal or barrier function returned a non-finite value."""


class BarrierTerminalConflict(RBDSDEError):
    """The barrier exceeds the terminal value at the horizon (L_T > xi)."""


class InvalidGrid(RBDSDEError):
    pass


class ShapeError(RBDSDEError, ValueError):
    pass


class SingularRegression(RBDSDEError):
    """The regression design matrix is rank deficient and ridge fallback is off."""


class BudgetExceeded(RBDSDEError):
    pass


class NumericalBlowup(RBDSDEError):
    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite values at time step {step}")


class InvalidLevel(RBDSDEError, ValueError):
    pass


class MissingH4(RBDSDEError):
    """The truncation construction needs g(t, 0, 0) == 0."""


class EnsembleMismatch(RBDSDEError):
    pass


class OracleUnsupported(RBDSDEError):
    pass


class UnknownCase(RBDSDEError, KeyError):
    pass


class ConfigError(RBDSDEError):
    """Experiment configuration could not be parsed or resolved."""
