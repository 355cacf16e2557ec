"""Exception hierarchy.

Everything deriving from :class:`MRNetError` is a user-facing data or
configuration problem (CLI exit code 1). :class:`InvariantError` signals a
broken internal guarantee (exit code 2).
"""


class MRNetError(Exception):
    """Base class for recoverable data/config errors."""


class ConfigError(MRNetError):
    pass


class DataError(MRNetError):
    """Bad cell content; carries the offending row/column when known."""

    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row!r}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class ParseError(DataError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        prefix = f"{path}:" if path is not None else ""
        if line is not None:
            prefix += f"{line}:"
        super().__init__(f"{prefix} {message}" if prefix else message)


class AlignmentError(DataError):
    pass


class ConditioningError(MRNetError):
    """The conditioning set cannot be used (rank deficiency or too few samples)."""


class NumericalError(MRNetError):
    pass


class PathOverflowError(MRNetError):
    def __init__(self, limit):
        self.limit = limit
        super().__init__(f"path enumeration exceeded {limit} paths")


class InvariantError(RuntimeError):
    """An internal guarantee was violated; indicates a bug, not bad input."""
