"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, file/format problems
(FormatError, OSError) -> 2, and data/numeric problems (ShapeError,
DomainError, StateError, NumericError) -> 3.
"""


class BgruError(Exception):
    """Base class for all package errors."""


class ShapeError(BgruError):
    """Operands have incompatible dimensions."""


class DomainError(BgruError):
    """An argument is outside the operation's valid domain."""


class ConfigError(BgruError):
    """Invalid or missing configuration."""


class StateError(BgruError):
    """Cached state is missing or inconsistent with the request."""


class NumericError(BgruError):
    """A computation produced non-finite values."""


class FormatError(BgruError):
    """A file's contents do not match the expected layout."""
