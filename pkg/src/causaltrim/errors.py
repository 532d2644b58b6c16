"""Exception types shared across the package.

ConfigError maps to CLI exit code 2 (invalid configuration), everything
else to exit code 1 (runtime failure).
"""


class ConfigError(Exception):
    """Invalid configuration: bad key, bad value, or mismatched shapes."""


class DataError(Exception):
    """Malformed or incompatible data encountered at runtime."""


class TrainingError(Exception):
    """Training aborted (non-finite loss or gradient)."""
