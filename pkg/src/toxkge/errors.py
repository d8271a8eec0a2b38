"""Exception types raised across the package."""


class ToxKGEError(Exception):
    """Base class for package errors."""


class ConfigError(ToxKGEError, ValueError):
    pass


class ParseError(ToxKGEError, ValueError):
    def __init__(self, message: str, lineno: int = 0):
        super().__init__(message)
        self.lineno = lineno


class QueryError(ToxKGEError, ValueError):
    pass


class LookupFailure(ToxKGEError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class UnsupportedUnitError(ToxKGEError, ValueError):
    pass


class DomainError(ToxKGEError, ValueError):
    pass


class TrainingError(ToxKGEError, RuntimeError):
    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class GroupingError(ToxKGEError, ValueError):
    def __init__(self, message: str, offenders=()):
        super().__init__(message)
        self.offenders = list(offenders)


class ConvergenceError(ToxKGEError, RuntimeError):
    def __init__(self, message: str, n_iter: int = 0):
        super().__init__(message)
        self.n_iter = n_iter


class CoverageError(ToxKGEError, ValueError):
    def __init__(self, message: str, missing=()):
        super().__init__(message)
        self.missing = list(missing)
