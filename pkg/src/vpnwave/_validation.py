"""Input validation helpers used across the estimators and feature code."""

import numbers

import numpy as np

from .exceptions import ConfigError, DimensionError


def check_levels(levels):
    """Return ``levels`` as a Python int, rejecting anything below 1."""
    if isinstance(levels, bool) or not isinstance(levels, numbers.Integral):
        raise ConfigError(f"decomposition depth must be an integer, got {levels!r}")
    if levels < 1:
        raise ConfigError(f"decomposition depth must be >= 1, got {levels}")
    return int(levels)


def check_signal(x, name="signal", allow_empty=False):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size == 0 and not allow_empty:
        raise ValueError(f"{name} must not be empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_matrix(X, n_features=None):
    """Validate a 2-D finite float matrix.

    When ``n_features`` is given the column count must match it exactly,
    otherwise a :class:`DimensionError` naming both sizes is raised.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D feature matrix, got shape {X.shape}")
    if n_features is not None and X.shape[1] != n_features:
        raise DimensionError(
            f"feature dimension mismatch: model expects {n_features} features, got {X.shape[1]}"
        )
    if not np.all(np.isfinite(X)):
        raise ValueError("feature matrix contains non-finite values")
    return X


def check_binary_labels(y, n_samples=None):
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"labels must be one-dimensional, got shape {y.shape}")
    if n_samples is not None and y.shape[0] != n_samples:
        raise ValueError(f"got {y.shape[0]} labels for {n_samples} samples")
    y = y.astype(np.int64)
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 (nonVPN) or 1 (VPN)")
    return y
