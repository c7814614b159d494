"""Shared input validation helpers."""

import numpy as np


def as_float_matrix(a, name="array"):
    """Coerce to a C-contiguous float64 2-D array with finite entries."""
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_float_vector(a, name="vector"):
    """Coerce to a 1-D float64 array with finite entries."""
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_weight_matrix(a, name="weights"):
    """Like :func:`as_float_matrix` but promotes 1-D input to a single column."""
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 1-D or 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_same_features(a, b, name_a="A", name_b="B"):
    """Require two point matrices to share their feature dimension."""
    if a.shape[1] != b.shape[1]:
        raise ValueError(
            f"feature dimension mismatch: {name_a} has {a.shape[1]} columns, "
            f"{name_b} has {b.shape[1]}"
        )
