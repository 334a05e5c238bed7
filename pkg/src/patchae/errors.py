"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration problems exit 1, data and
evaluation problems exit 2, numerical failures exit 3.
"""


class PatchAEError(Exception):
    """Base class for all package errors."""


class ConfigError(PatchAEError):
    """Invalid configuration value, range, or file."""


class InputError(PatchAEError):
    """Runtime input violates an operation's contract (shape, dtype, range)."""


class DataError(PatchAEError):
    """Dataset or artifact file is missing, unreadable, or corrupt."""


class EvaluationError(PatchAEError):
    """Evaluation cannot be computed (e.g. a single-class label set)."""


class NumericalError(PatchAEError):
    """Training or scoring produced non-finite values."""


class WeightsUnavailableError(PatchAEError):
    """Pretrained backbone weights were requested but could not be loaded."""
