"""Input validation helpers shared by estimators and numeric kernels."""

from __future__ import annotations

import numpy as np

from .exceptions import TemperatureError, ValidationError

# Probability vectors are accepted if they sum to one within this slack;
# renormalization noise from tempering stays orders of magnitude below it.
_DISTRIBUTION_ATOL = 1e-6


def check_matrix(x, name: str = "X", n_features: int | None = None) -> np.ndarray:
    """Coerce to a 2-D float64 array of finite values."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValidationError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    if n_features is not None and arr.shape[1] != n_features:
        raise ValidationError(
            f"{name} has {arr.shape[1]} features, expected {n_features}"
        )
    return arr


def check_vector(x, name: str = "x", length: int | None = None) -> np.ndarray:
    """Coerce to a 1-D float64 array of finite values."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    if length is not None and arr.shape[0] != length:
        raise ValidationError(f"{name} has length {arr.shape[0]}, expected {length}")
    return arr


def check_class_labels(y, name: str = "y", n_classes: int | None = None) -> np.ndarray:
    """Coerce to integer class indices in ``0..n_classes-1``."""
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        as_int = arr.astype(np.int64)
        if not np.array_equal(as_int, arr):
            raise ValidationError(f"{name} must hold integer class indices")
        arr = as_int
    else:
        arr = arr.astype(np.int64)
    if arr.size and arr.min() < 0:
        raise ValidationError(f"{name} contains negative class indices")
    if n_classes is not None and arr.size and arr.max() >= n_classes:
        raise ValidationError(
            f"{name} contains class {arr.max()} but only {n_classes} classes exist"
        )
    return arr


def check_distribution(p, name: str = "p") -> np.ndarray:
    """Validate a categorical probability vector (or batch of them).

    Entries must be non-negative and each row must sum to 1 within a small
    tolerance. Returns the input as float64 without renormalizing.
    """
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim == 0 or arr.shape[-1] < 1:
        raise ValidationError(f"{name} must have at least one category")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    if np.any(arr < -1e-12):
        raise ValidationError(f"{name} contains negative probabilities")
    sums = arr.sum(axis=-1)
    if not np.allclose(sums, 1.0, atol=_DISTRIBUTION_ATOL, rtol=0.0):
        raise ValidationError(
            f"{name} does not sum to 1 (got sums in "
            f"[{np.min(sums):.6g}, {np.max(sums):.6g}])"
        )
    return arr


def check_temperature(temperature) -> float:
    """Validate a softmax temperature (positive finite scalar)."""
    t = float(temperature)
    if not np.isfinite(t) or t <= 0.0:
        raise TemperatureError(f"temperature must be positive and finite, got {t!r}")
    return t


def check_positive_variance(variance, name: str = "variance") -> np.ndarray:
    """Validate strictly positive, finite variances (scalar or array)."""
    arr = np.asarray(variance, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
        raise ValidationError(f"{name} must be strictly positive and finite")
    return arr
