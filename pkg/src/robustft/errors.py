"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, OSError/ParseError -> 3,
NumericError -> 4.
"""


class ConfigError(ValueError):
    """Invalid configuration or mismatched inputs (e.g. dataset env != run env)."""


class ShapeError(ValueError):
    """Array dimensions do not match what an operation expects."""


class NumericError(ArithmeticError):
    """A non-finite value reached an update that must stay finite."""


class StateError(RuntimeError):
    """Operation is not valid in the object's current state (e.g. sampling an empty buffer)."""


class ParseError(ValueError):
    """A persisted file is malformed. Carries the offending line or byte offset."""

    def __init__(self, message, *, path=None, line=None, offset=None):
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"offset {offset}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.path = path
        self.line = line
        self.offset = offset
