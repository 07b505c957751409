"""Exception types shared across the package."""


class CausalOdeError(Exception):
    """Base class for errors raised by this package."""


class SchemaError(CausalOdeError, ValueError):
    """An input file or array does not match its documented layout."""


class IngestionError(CausalOdeError, ValueError):
    """Raw data files could not be assembled into a panel.

    Carries enough context (file, row, column) to locate the offending cell.
    """


class EmptySplitError(CausalOdeError, ValueError):
    """A panel is too short to produce even one training chunk."""


class ConfigError(CausalOdeError, ValueError):
    """A configuration value or key is invalid."""


class DomainError(CausalOdeError, ValueError):
    """A numeric argument is outside the domain of the operation."""


class DivergenceError(CausalOdeError, RuntimeError):
    """Integration or optimization produced non-finite values."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class CheckpointError(CausalOdeError, RuntimeError):
    """A checkpoint file is unreadable or has an unsupported version."""


class ScriptError(CausalOdeError, ValueError):
    """An intervention script is malformed or references unknown entities.

    ``location`` points at the offending edit, e.g. ``"script[2].treatment"``.
    """

    def __init__(self, message: str, location: str | None = None):
        super().__init__(message)
        self.location = location


class UnsupportedOperationError(CausalOdeError, RuntimeError):
    """The requested operation is not defined for this kind of input."""
