"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand extents are incompatible."""


class BoundsError(IndexError):
    """An index falls outside the indexed axis."""


class ContractError(RuntimeError):
    """An operation was called outside its contract (wrong task, non-scalar loss, ...)."""


class ConfigError(ValueError):
    """A model or training configuration is invalid.

    ``field`` names the offending configuration key when one is known.
    """

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class ParseError(ValueError):
    """A point-cloud, config or checkpoint file could not be parsed."""

    def __init__(self, message, line=None, path=None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.line = line
        self.path = path
