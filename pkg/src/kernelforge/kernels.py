"""Radial kernel functions and blocked kernel-matrix assembly.

Two unit-diagonal families are supported:

    laplace :  K(x, z) = exp(-||x - z||_2 / b)
    gaussian:  K(x, z) = exp(-||x - z||_2^2 / (2 b^2))

with bandwidth ``b > 0``.  Both are symmetric positive semi-definite, take
values in ``(0, 1]``, and satisfy ``K(x, x) = 1``.

Matrices ``K(A, B)`` are assembled in row blocks over ``A`` so that memory
stays bounded by the block size.  The blocked path is bit-identical to
evaluating :func:`eval_kernel` entry by entry, and ``K(A, B)`` equals
``K(B, A).T`` exactly, not merely to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .validation import as_float_matrix, as_weight_matrix, check_same_features

LAPLACE = "laplace"
GAUSSIAN = "gaussian"

KERNEL_FAMILIES = (LAPLACE, GAUSSIAN)

DEFAULT_BLOCK_ROWS = 256


@dataclass(frozen=True)
class KernelSpec:
    """A kernel family plus its bandwidth (length units of the input space)."""

    family: str
    bandwidth: float

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ValueError(
                f"unknown kernel family {self.family!r}; expected one of {KERNEL_FAMILIES}"
            )
        if not (np.isfinite(self.bandwidth) and self.bandwidth > 0):
            raise ValueError(f"bandwidth must be a positive real, got {self.bandwidth!r}")


@dataclass
class Dataset:
    """Dense features ``(n, d)`` paired with targets ``(n, c)``.

    Single-output targets may be passed 1-D and are stored as one column.
    Multi-class targets are one-hot rows over ``c`` classes.
    """

    features: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.features = as_float_matrix(self.features, "features")
        self.targets = as_weight_matrix(self.targets, "targets")
        if self.features.shape[0] != self.targets.shape[0]:
            raise ValueError(
                f"features have {self.features.shape[0]} rows but targets have "
                f"{self.targets.shape[0]}"
            )
        if self.features.shape[0] < 1:
            raise ValueError("dataset must contain at least one sample")
        if self.features.shape[1] < 1:
            raise ValueError("features must have at least one column")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def c(self) -> int:
        return self.targets.shape[1]


def _apply_family(spec: KernelSpec, sq_dists: np.ndarray) -> np.ndarray:
    """Map squared Euclidean distances through the kernel profile."""
    if spec.family == LAPLACE:
        return np.exp(-np.sqrt(sq_dists) / spec.bandwidth)
    return np.exp(-sq_dists / (2.0 * spec.bandwidth * spec.bandwidth))


def kernel_matrix(spec, A, B, block_rows: int = DEFAULT_BLOCK_ROWS) -> np.ndarray:
    """Assemble ``K(A, B)`` with entries ``K(a_i, b_j)``.

    ``A`` is processed in blocks of at most ``block_rows`` rows; the result is
    independent of the block size, bit for bit.
    """
    A = as_float_matrix(A, "A")
    B = as_float_matrix(B, "B")
    check_same_features(A, B)
    if block_rows < 1:
        raise ValueError(f"block_rows must be >= 1, got {block_rows}")
    n, m = A.shape[0], B.shape[0]
    out = np.empty((n, m), dtype=np.float64)
    for start in range(0, n, block_rows):
        stop = min(start + block_rows, n)
        diff = A[start:stop, None, :] - B[None, :, :]
        sq = (diff * diff).sum(axis=-1)
        out[start:stop] = _apply_family(spec, sq)
    return out


def eval_kernel(spec, x, z) -> float:
    """Evaluate ``K(x, z)`` for two points; shares the matrix code path."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    z = np.ascontiguousarray(z, dtype=np.float64)
    if x.ndim != 1 or z.ndim != 1:
        raise ValueError("x and z must be 1-D points")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z))):
        raise ValueError("x and z must be finite")
    if x.shape[0] != z.shape[0]:
        raise ValueError(f"dimension mismatch: {x.shape[0]} vs {z.shape[0]}")
    return float(kernel_matrix(spec, x[None, :], z[None, :])[0, 0])


def kernel_diag(spec, X) -> np.ndarray:
    """Diagonal ``K(x_i, x_i)`` for each row of ``X``.

    Radial profiles have zero self-distance, so this reduces to the profile
    at zero (which is 1 for both built-in families).
    """
    X = as_float_matrix(X, "X")
    return _apply_family(spec, np.zeros(X.shape[0]))


def kernel_diag_max(spec, X) -> float:
    """Largest diagonal entry of ``K(X, X)``, used as the curvature scale."""
    X = as_float_matrix(X, "X")
    if X.shape[0] < 1:
        raise ValueError("X must contain at least one row")
    return float(np.max(kernel_diag(spec, X)))


def kernel_apply(spec, A, B, V, block_rows: int = DEFAULT_BLOCK_ROWS) -> np.ndarray:
    """Compute ``K(A, B) @ V`` without holding the full kernel matrix.

    Row blocks of ``K(A, B)`` are formed and multiplied on the fly, so memory
    stays ``O(block_rows * |B|)`` regardless of ``|A|``.
    """
    A = as_float_matrix(A, "A")
    B = as_float_matrix(B, "B")
    check_same_features(A, B)
    V = as_weight_matrix(V, "V")
    if V.shape[0] != B.shape[0]:
        raise ValueError(f"V has {V.shape[0]} rows but B has {B.shape[0]}")
    n = A.shape[0]
    out = np.empty((n, V.shape[1]), dtype=np.float64)
    for start in range(0, n, block_rows):
        stop = min(start + block_rows, n)
        out[start:stop] = kernel_matrix(spec, A[start:stop], B, block_rows) @ V
    return out
