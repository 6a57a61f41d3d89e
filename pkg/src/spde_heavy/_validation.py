"""Small argument checks shared by the public functions and estimators."""
from __future__ import annotations

import numbers

import numpy as np

from .exceptions import ConfigError

UINT64_MASK = (1 << 64) - 1


def check_positive(name: str, value, *, allow_zero: bool = False) -> float:
    if not isinstance(value, numbers.Real) or isinstance(value, bool):
        raise ConfigError(f"{name} must be a real number, got {value!r}")
    value = float(value)
    if not np.isfinite(value):
        raise ConfigError(f"{name} must be finite, got {value}")
    if value < 0 or (value == 0 and not allow_zero):
        bound = ">= 0" if allow_zero else "> 0"
        raise ConfigError(f"{name} must be {bound}, got {value}")
    return value


def check_int(name: str, value, *, minimum: int = 0) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        if isinstance(value, numbers.Real) and float(value).is_integer():
            value = int(value)
        else:
            raise ConfigError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if value < minimum:
        raise ConfigError(f"{name} must be >= {minimum}, got {value}")
    return value


def check_dim(dim) -> int:
    dim = check_int("dim", dim, minimum=1)
    if dim > 3:
        raise ConfigError(f"dim must be 1, 2 or 3, got {dim}")
    return dim


def check_seed(seed) -> int:
    """Coerce a seed to an unsigned 64-bit integer."""
    if isinstance(seed, bool) or not isinstance(seed, numbers.Integral):
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    seed = int(seed)
    if seed < 0 or seed > UINT64_MASK:
        raise ConfigError(f"seed must fit in 64 unsigned bits, got {seed}")
    return seed


def check_points(x, dim: int) -> np.ndarray:
    """Return ``x`` as an ``(n, dim)`` float array.

    One-dimensional problems also accept a flat array of coordinates.
    """
    x = np.asarray(x, dtype=float)
    if dim == 1 and x.ndim <= 1:
        return x.reshape(-1, 1)
    if x.ndim == 1 and x.shape[0] == dim:
        return x.reshape(1, dim)
    if x.ndim != 2 or x.shape[1] != dim:
        raise ConfigError(f"expected points of shape (n, {dim}), got {x.shape}")
    return x


def radius(x, dim: int) -> np.ndarray:
    """Euclidean norm over the trailing coordinate axis.

    For ``dim == 1`` a bare array of coordinates is accepted and the result
    has the same shape; otherwise the last axis must have length ``dim``.
    """
    x = np.asarray(x, dtype=float)
    if dim == 1:
        if x.ndim >= 1 and x.shape[-1] == 1:
            x = x[..., 0]
        return np.abs(x)
    if x.shape[-1] != dim:
        raise ConfigError(f"points must have trailing dimension {dim}, got {x.shape}")
    return np.sqrt(np.sum(x * x, axis=-1))
