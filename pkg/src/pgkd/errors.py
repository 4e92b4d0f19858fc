"""Exception hierarchy shared across the package."""


class PGKDError(Exception):
    """Base class for all errors raised by pgkd."""


class DimensionError(PGKDError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(PGKDError, ValueError):
    """A documented precondition of an operation was violated."""


class ParameterError(PGKDError, ValueError):
    """A numeric parameter is outside its valid domain."""


class DataError(PGKDError, ValueError):
    """Input data is inconsistent (bad ids, labels out of range, ...)."""


class ConfigError(PGKDError, ValueError):
    """A configuration is malformed or cannot be satisfied."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class LoadError(PGKDError):
    """A dataset file could not be parsed; carries file and line."""

    def __init__(self, path, line: int | None, message: str):
        where = f"{path}:{line}" if line is not None else f"{path}"
        super().__init__(f"{where}: {message}")
        self.path = path
        self.line = line


class CheckpointError(PGKDError):
    """A checkpoint file is corrupt, has the wrong version, or mismatched shapes."""


class DivergenceError(PGKDError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, record=None):
        super().__init__(message)
        self.record = record
