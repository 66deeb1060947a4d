"""Argument checks shared by the estimators and the functional API."""

import math
import numbers

import numpy as np

from .errors import ShapeMismatchError


def check_exponent(p, *, allow_one=True, allow_inf=True):
    """Return ``p`` as a float after checking it is a valid Lebesgue exponent."""
    if isinstance(p, str) and p.lower() in ("inf", "infinity"):
        p = math.inf
    if not isinstance(p, numbers.Real):
        raise TypeError(f"exponent must be real, got {type(p).__name__}")
    p = float(p)
    if math.isnan(p):
        raise ValueError("exponent is NaN")
    if math.isinf(p):
        if not allow_inf or p < 0:
            raise ValueError("p = inf is not supported here")
        return p
    lo_ok = p >= 1 if allow_one else p > 1
    if not lo_ok:
        raise ValueError(f"exponent must be {'>=' if allow_one else '>'} 1, got {p}")
    return p


def check_epsilon(epsilon):
    epsilon = float(epsilon)
    if not 0 < epsilon <= 1:
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")
    return epsilon


def check_positive(value, name):
    value = float(value)
    if not value > 0 or not math.isfinite(value):
        raise ValueError(f"{name} must be positive and finite, got {value}")
    return value


def check_points(x, dim):
    """Coerce ``x`` to a float array of shape (m, dim)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.shape[0] != dim:
            raise ShapeMismatchError(f"point has length {x.shape[0]}, expected {dim}")
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ShapeMismatchError(f"points must have shape (m, {dim}), got {x.shape}")
    return x


def check_grid_values(values, grid):
    """Reshape ``values`` onto ``grid`` or raise on a size mismatch."""
    values = np.asarray(values, dtype=float)
    if values.shape == grid.shape:
        return values
    if values.size == grid.n_cells:
        return values.reshape(grid.shape)
    raise ShapeMismatchError(
        f"field with {values.size} samples does not fit grid of shape {grid.shape}"
    )


def check_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
