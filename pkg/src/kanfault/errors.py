"""Exception types shared across the package.

The CLI maps each class onto a distinct exit code.
"""


class KanFaultError(Exception):
    exit_code = 1


class ConfigError(KanFaultError, ValueError):
    """Invalid configuration or task specification."""

    exit_code = 1


class DataError(KanFaultError, ValueError):
    """Malformed, missing or inconsistent input data."""

    exit_code = 2


class NumericalError(KanFaultError, ArithmeticError):
    """Training or fitting produced non-finite values."""

    exit_code = 3
