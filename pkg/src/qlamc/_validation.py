"""Small input-validation helpers shared by the estimators and config parser."""

import numbers

import numpy as np


class ConfigError(ValueError):
    """Raised when a configuration value is missing, malformed or out of range."""

    def __init__(self, message, field=None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


def check_positive_int(value, name):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < 1:
        raise ConfigError(f"expected a positive integer, got {value!r}", name)
    return int(value)


def check_in_range(value, name, low=None, high=None, low_inclusive=True, high_inclusive=True):
    if isinstance(value, bool) or not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ConfigError(f"expected a finite number, got {value!r}", name)
    if low is not None and (value < low or (value == low and not low_inclusive)):
        raise ConfigError(f"{value!r} below allowed range (min {low})", name)
    if high is not None and (value > high or (value == high and not high_inclusive)):
        raise ConfigError(f"{value!r} above allowed range (max {high})", name)
    return float(value)


def check_choice(value, name, choices):
    if value not in choices:
        raise ConfigError(f"{value!r} not one of {sorted(choices)}", name)
    return value


def check_interval(pair, name):
    lo, hi = (float(v) for v in pair)
    if not lo < hi:
        raise ConfigError(f"interval {pair!r} must satisfy low < high", name)
    return lo, hi


def as_1d_float(x, name="X"):
    """Coerce scalar/list/array input to a 1-D float array (sklearn-style helper)."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    elif arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    elif arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D or a single column, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or infinity")
    return arr
