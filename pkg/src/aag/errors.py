"""Exception hierarchy shared across the package.

CLI exit-code mapping: ConfigError / DataError / UsageError / FormatError
exit 2, TrainingError / NumericsError exit 3.
"""


class AAGError(Exception):
    """Base class for all package errors."""


class ShapeError(AAGError):
    """Operand shapes are incompatible with the requested operation."""


class ConfigError(AAGError):
    """Invalid or inconsistent configuration value."""


class DataError(AAGError):
    """Invalid sample content (labels, ids, dims) in a dataset."""


class UsageError(AAGError):
    """API called outside its contract (wrong payload, empty input, ...)."""


class FormatError(AAGError):
    """Malformed or truncated binary file."""


class TrainingError(AAGError):
    """Optimization failure (e.g. NaN gradients), names the parameter."""


class NumericsError(AAGError):
    """An operation produced non-finite values."""
