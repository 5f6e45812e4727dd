"""Exception hierarchy shared by all qars modules."""


class QarsError(Exception):
    """Base class for recoverable data/runtime errors (CLI exit code 1)."""


class DimensionError(QarsError, ValueError):
    pass


class NumericError(QarsError, FloatingPointError):
    pass


class FormatError(QarsError, ValueError):
    """Malformed binary or artifact file. ``offset`` is the byte position, if known."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DataError(QarsError, ValueError):
    pass


class ConfigError(QarsError, ValueError):
    pass


class UndefinedCorrelationError(QarsError, ValueError):
    pass
