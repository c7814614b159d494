"""Spectrum-flattening operators built from a top-q eigensystem.

Two factored forms are used, both rank ``q`` and never densified outside of
test oracles:

    exact mode (over the n training points):
        Q   = E (I_q - lam_tail Lam^-1) E^T
        so (I - Q) K(X, X) has eigenvalues min(lam_i, lam_tail);

    nystrom mode (over an s-point subsample):
        Q_s = E (I_q - lam_tail Lam^-1) Lam^-1 E^T
        which reproduces the exact flattener through the kernel:
        K(X_s, X_s) Q_s = Q.

Applications cost ``O(size * q)``.  The matrix
``C = K(Z, X_s) E (Lam^-1 - lam_tail Lam^-2) E^T`` precomputes the composite
``K(Z, X_s) Q_s`` so a training step touches the subsample only through
``K(X_s, X_m)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import kernel_matrix
from .spectral import TopQEigensystem, top_q_eigensystem
from .validation import as_float_matrix

EXACT_Q = "exact-q"
NYSTROM_QS = "nystrom-qs"

_MODES = (EXACT_Q, NYSTROM_QS)


@dataclass(frozen=True)
class NystromPreconditioner:
    """Factored flattening operator tied to the points it was built from."""

    eig: TopQEigensystem
    anchor_points: np.ndarray
    mode: str

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {_MODES}")
        pts = as_float_matrix(self.anchor_points, "anchor_points")
        if pts.shape[0] != self.eig.source_size:
            raise ValueError(
                f"anchor_points has {pts.shape[0]} rows but the eigensystem "
                f"was built from {self.eig.source_size}"
            )
        object.__setattr__(self, "anchor_points", pts)

    @property
    def size(self) -> int:
        return self.eig.source_size

    @property
    def tail_eigenvalue(self) -> float:
        return self.eig.tail_eigenvalue


def build_preconditioner(spec, points, q: int, mode: str) -> NystromPreconditioner:
    """Assemble ``K(points, points)``, decompose, and wrap as a flattener."""
    points = as_float_matrix(points, "points")
    eig = top_q_eigensystem(kernel_matrix(spec, points, points), q)
    return NystromPreconditioner(eig=eig, anchor_points=points, mode=mode)


def flatten_weights(eig: TopQEigensystem) -> np.ndarray:
    """Per-direction shrinkage ``1 - lam_tail / lam_i``, in ``[0, 1)``."""
    if eig.q == 0:
        return np.zeros(0)
    return 1.0 - eig.tail_eigenvalue / eig.eigenvalues


def _project_scaled(E: np.ndarray, weights: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``E diag(weights) E^T v`` for 1-D or 2-D ``v``."""
    t = E.T @ v
    t = t * (weights if t.ndim == 1 else weights[:, None])
    return E @ t


def _check_rows(pc: NystromPreconditioner, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim not in (1, 2) or v.shape[0] != pc.size:
        raise ValueError(
            f"operand has shape {v.shape}, expected leading dimension {pc.size}"
        )
    return v


def apply_I_minus_Q(pc: NystromPreconditioner, v) -> np.ndarray:
    """``(I - Q) v`` in factored form; exact mode only."""
    if pc.mode != EXACT_Q:
        raise ValueError(f"apply_I_minus_Q requires mode {EXACT_Q!r}, got {pc.mode!r}")
    v = _check_rows(pc, v)
    return v - _project_scaled(pc.eig.eigenvectors, flatten_weights(pc.eig), v)


def apply_Qs(pc: NystromPreconditioner, v) -> np.ndarray:
    """``Q_s v`` in factored form; nystrom mode only."""
    if pc.mode != NYSTROM_QS:
        raise ValueError(f"apply_Qs requires mode {NYSTROM_QS!r}, got {pc.mode!r}")
    v = _check_rows(pc, v)
    if pc.eig.q == 0:
        return np.zeros_like(v)
    weights = flatten_weights(pc.eig) / pc.eig.eigenvalues
    return _project_scaled(pc.eig.eigenvectors, weights, v)


def build_C(spec, Z, pc: NystromPreconditioner) -> np.ndarray:
    """Precompute ``C = K(Z, X_s) Q_s`` as a dense ``p x s`` matrix.

    For any batch ``X_m`` and residual ``g``,
    ``C @ K(X_s, X_m) @ g == K(Z, X_s) Q_s K(X_s, X_m) g``.
    """
    if pc.mode != NYSTROM_QS:
        raise ValueError(f"build_C requires mode {NYSTROM_QS!r}, got {pc.mode!r}")
    Z = as_float_matrix(Z, "Z")
    kzs = kernel_matrix(spec, Z, pc.anchor_points)
    if pc.eig.q == 0:
        return np.zeros((Z.shape[0], pc.size))
    weights = flatten_weights(pc.eig) / pc.eig.eigenvalues
    return (kzs @ pc.eig.eigenvectors) * weights[None, :] @ pc.eig.eigenvectors.T
