"""Exception types shared across the package.

The CLI maps these onto exit codes (2 usage, 3 numeric, 4 missing artifact).
"""


class MFUQError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigurationError(MFUQError, ValueError):
    """Invalid distribution parameters or run configuration."""

    exit_code = 2


class UsageError(MFUQError, ValueError):
    """Inputs with inconsistent shapes, counts or indices."""

    exit_code = 2


class NumericError(MFUQError, ArithmeticError):
    """A factorization or optimization failed numerically."""

    exit_code = 3


class MissingArtifactError(MFUQError, FileNotFoundError):
    """A pipeline stage was run before the stage it depends on."""

    exit_code = 4
