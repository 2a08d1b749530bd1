"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4.
"""


class ConfigError(ValueError):
    """Invalid configuration: unknown key, bad value, inconsistent preset."""


class DataError(RuntimeError):
    """Bad or missing input data: empty corpus, short waveform, broken manifest."""


class NumericError(RuntimeError):
    """Numerical failure during training or evaluation (NaN loss, divergence)."""
