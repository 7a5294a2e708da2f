"""Shared exception types."""


class ConfigurationError(ValueError):
    """Bad sizes, mismatched shapes, or limits exceeded at construction time."""


class NumericError(RuntimeError):
    """A numeric routine failed to converge or produced non-finite values."""


class UsageError(RuntimeError):
    """An operation was invoked on an object in the wrong state."""
