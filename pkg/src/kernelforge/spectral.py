"""Top-q eigensystems of symmetric PSD matrices and the Nystrom extension.

The top-q eigensystem of an ``s x s`` symmetric PSD matrix is the tuple of
its ``q`` largest eigenvalues (descending), the matching orthonormal
eigenvectors, and the ``(q+1)``-th eigenvalue, which every preconditioner in
this package flattens the leading spectrum down to.

The Nystrom extension lifts a matrix eigenvector ``e`` with eigenvalue
``lam`` to the coefficient vector ``e / sqrt(lam)`` of a unit-norm RKHS
eigenfunction ``psi = K(., X) e / sqrt(lam)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .validation import as_float_matrix

# Full dense decomposition keeps the solver free of iterative-convergence
# knobs; reject sizes where that stops being reasonable on a desktop.
MAX_DENSE_SIZE = 4000

# Below this source-to-level ratio the Nystrom eigensystem is empirically
# shaky; warn rather than fail.
STABLE_SOURCE_RATIO = 10

_SYMMETRY_ATOL = 1e-8
_PSD_RTOL = 1e-8


@dataclass(frozen=True)
class TopQEigensystem:
    """Leading eigenpairs plus the first trailing eigenvalue.

    eigenvalues: shape ``(q,)``, descending, nonnegative.
    eigenvectors: shape ``(s, q)``, orthonormal columns.
    tail_eigenvalue: the ``(q+1)``-th eigenvalue of the source matrix.
    source_size: ``s``, the dimension the system was computed from.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    tail_eigenvalue: float
    source_size: int

    def __post_init__(self):
        lam = np.asarray(self.eigenvalues, dtype=np.float64)
        vec = np.asarray(self.eigenvectors, dtype=np.float64)
        if lam.ndim != 1 or vec.ndim != 2 or vec.shape[1] != lam.shape[0]:
            raise ValueError("eigenvalues and eigenvectors have inconsistent shapes")
        if vec.shape[0] != self.source_size:
            raise ValueError("eigenvectors do not match source_size")
        if lam.size and np.any(np.diff(lam) > 1e-12 * max(lam[0], 1.0)):
            raise ValueError("eigenvalues must be in descending order")
        if self.tail_eigenvalue < 0 or (lam.size and np.any(lam < 0)):
            raise ValueError("eigenvalues must be nonnegative")

    @property
    def q(self) -> int:
        return self.eigenvalues.shape[0]


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so the first nonzero component of each is positive."""
    out = vectors.copy()
    for j in range(out.shape[1]):
        nz = np.nonzero(out[:, j])[0]
        if nz.size and out[nz[0], j] < 0:
            out[:, j] = -out[:, j]
    return out


def top_q_eigensystem(A, q: int) -> TopQEigensystem:
    """Top-q eigensystem of a symmetric PSD matrix.

    ``q = 0`` is the degenerate level: no flattened directions, with the
    largest eigenvalue reported as the tail.  Ties are ordered by the
    underlying solver and broken deterministically (stable sort); eigenvector
    signs are fixed so results are reproducible.
    """
    A = as_float_matrix(A, "A")
    s = A.shape[0]
    if A.shape[1] != s:
        raise ValueError(f"A must be square, got shape {A.shape}")
    if s > MAX_DENSE_SIZE:
        raise ValueError(
            f"matrix size {s} exceeds the dense-eigensolver cap of {MAX_DENSE_SIZE}"
        )
    if not 0 <= q < s:
        raise ValueError(f"q must satisfy 0 <= q < {s}, got {q}")
    if np.max(np.abs(A - A.T)) > _SYMMETRY_ATOL:
        raise ValueError("A is not symmetric within 1e-8")

    w, v = scipy.linalg.eigh(A)
    order = np.argsort(-w, kind="stable")
    w = w[order]
    v = v[:, order]

    top = max(w[0], 0.0)
    if w[-1] < -_PSD_RTOL * max(top, 1e-300):
        raise ValueError(
            f"matrix is not PSD: smallest eigenvalue {w[-1]:.3e} "
            f"below -1e-8 * lambda_1 = {-_PSD_RTOL * top:.3e}"
        )
    w = np.maximum(w, 0.0)

    if q > 0 and s / q < STABLE_SOURCE_RATIO:
        warnings.warn(
            f"source size / level = {s}/{q} < {STABLE_SOURCE_RATIO}; "
            "the trailing eigenvalue estimate may be unstable",
            stacklevel=2,
        )

    return TopQEigensystem(
        eigenvalues=w[:q].copy(),
        eigenvectors=_fix_signs(v[:, :q]),
        tail_eigenvalue=float(w[q]),
        source_size=s,
    )


def nystrom_coefficients(eig: TopQEigensystem) -> np.ndarray:
    """Coefficient matrix with columns ``e_i / sqrt(lam_i)``.

    Column ``i`` expands the unit-norm eigenfunction of the sample covariance
    operator: evaluated back on the source points it reproduces
    ``sqrt(lam_i) e_i``.
    """
    if eig.q and np.min(eig.eigenvalues) <= 0.0:
        raise ValueError("cannot extend eigenvectors with a zero eigenvalue among the top q")
    return eig.eigenvectors / np.sqrt(eig.eigenvalues)[None, :]
