"""Exception types raised by the simulator and its diagnostics."""


class FFNSError(Exception):
    """Base class for every error raised by this package."""


class InsufficientHistory(FFNSError):
    pass


class SurfaceTouchesBottom(FFNSError):
    pass


class NoAdmissibleA(FFNSError):
    pass


class DiffeoViolated(FFNSError):
    pass


class ChartFolds(FFNSError):
    pass


class NotConverged(FFNSError):
    """Iterative solve missed its tolerance.

    The best iterate and its relative residual are attached so callers can
    decide whether to continue.
    """

    def __init__(self, message, x=None, residual=None):
        super().__init__(message)
        self.x = x
        self.residual = residual


class IndefiniteOperator(FFNSError):
    pass


class CflViolation(FFNSError):
    pass


class TaylorViolated(FFNSError):
    pass


class CompatibilityNotReached(FFNSError):
    pass


class UnknownInequality(FFNSError, KeyError):
    pass


class DegenerateData(FFNSError, ValueError):
    pass


class ConfigError(FFNSError):
    """Invalid configuration, carrying the file and line it came from."""

    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(loc + message)
        self.path = path
        self.line = line
