"""Executable diagnostics: fixed points, variance traces, generalization laws.

The exact full-batch iteration is linear in the weights, so its limit has a
closed form.  With ``B = K(X, Z)``, ``P = I - Q`` the data flattener, and
``M = B^T P B``:

    alpha_inf = M^-1 B^T P y

For student-teacher data ``y = B alpha* + xi`` with centered noise of
variance ``sigma^2``, the limiting estimator is unbiased and

    E ||alpha_inf - alpha*||^2 / sigma^2 = tr(M^-2 B^T P^2 B)

with a companion expression written via ``Q P`` instead of ``P^2``.  The
two are linked by the algebraic identity

    tr(M^-2 B^T P^2 B) = tr(M^-1) - tr(M^-2 B^T Q P B)

which holds because ``P = P^2 + Q P``.  All of these are computed here from
factored operators (Q itself is never densified) so tests and the CLI can
probe them directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .kernels import kernel_matrix
from .preconditioner import EXACT_Q, apply_I_minus_Q, build_preconditioner
from .validation import as_float_matrix, as_weight_matrix, check_same_features

_SINGULARITY_RTOL = 1e-12


class SingularMatrixError(ValueError):
    """The normal-equations matrix has a numerically zero eigenvalue."""

    def __init__(self, message, smallest_eigenvalue: float):
        super().__init__(message)
        self.smallest_eigenvalue = smallest_eigenvalue


@dataclass
class FixedPointReport:
    alpha_inf: np.ndarray
    variance_trace_direct: float   # tr(M^-2 B^T (I-Q)^2 B)
    variance_trace_alt: float      # n - tr(M^-2 B^T Q (I-Q) B), as printed
    lr_bound: float                # 2 / lambda_max(M)
    trace_m_inv: float             # tr(M^-1), recorded for the identity probe


@dataclass(frozen=True)
class StudentTeacherSpec:
    """Known teacher weights plus the noise level of the synthetic targets."""

    alpha_star: np.ndarray
    noise_sigma: float
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "alpha_star", as_weight_matrix(self.alpha_star, "alpha_star"))
        if not (np.isfinite(self.noise_sigma) and self.noise_sigma >= 0):
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma!r}")


class FixedPointOperator:
    """Factored solve machinery shared by single reports and Monte-Carlo loops."""

    def __init__(self, spec, X, Z, q: int):
        X = as_float_matrix(X, "X")
        Z = as_float_matrix(Z, "Z")
        check_same_features(X, Z, "X", "Z")
        self.n = X.shape[0]
        self.p = Z.shape[0]
        self.B = kernel_matrix(spec, X, Z)
        self.pc = build_preconditioner(spec, X, q, EXACT_Q) if q > 0 else None
        self.PB = apply_I_minus_Q(self.pc, self.B) if self.pc is not None else self.B
        M = self.B.T @ self.PB
        w, V = scipy.linalg.eigh(M)
        if w[0] <= _SINGULARITY_RTOL * max(w[-1], 0.0):
            raise SingularMatrixError(
                f"normal-equations matrix is singular: smallest eigenvalue {w[0]:.6e}",
                smallest_eigenvalue=float(w[0]),
            )
        self._w = w
        self._V = V

    def flatten(self, v):
        return apply_I_minus_Q(self.pc, v) if self.pc is not None else v

    def apply_m_inv(self, rhs):
        t = self._V.T @ rhs
        t = t / (self._w if t.ndim == 1 else self._w[:, None])
        return self._V @ t

    def alpha_inf(self, y):
        y = as_weight_matrix(y, "y")
        return self.apply_m_inv(self.B.T @ self.flatten(y))

    def report(self, y) -> FixedPointReport:
        m_inv_sq = (self._V / (self._w * self._w)[None, :]) @ self._V.T
        direct = float(np.sum(m_inv_sq * (self.PB.T @ self.PB)))
        # Q (I-Q) B = (I-Q) B - (I-Q)^2 B, so only factored applies are needed.
        qpb = self.PB - self.flatten(self.PB)
        alt = float(self.n - np.sum(m_inv_sq * (self.B.T @ qpb)))
        return FixedPointReport(
            alpha_inf=self.alpha_inf(y),
            variance_trace_direct=direct,
            variance_trace_alt=alt,
            lr_bound=float(2.0 / self._w[-1]),
            trace_m_inv=float(np.sum(1.0 / self._w)),
        )


def fixed_point(spec, X, y, Z, q: int) -> FixedPointReport:
    """Closed-form limit of the exact iteration plus its variance traces."""
    return FixedPointOperator(spec, X, Z, q).report(y)


def student_teacher_sample(spec, X, Z, st: StudentTeacherSpec, rng=None) -> np.ndarray:
    """Draw ``y = K(X, Z) alpha* + sigma g`` with standard normal ``g``."""
    X = as_float_matrix(X, "X")
    Z = as_float_matrix(Z, "Z")
    clean = kernel_matrix(spec, X, Z) @ st.alpha_star
    if st.noise_sigma == 0:
        return clean
    if rng is None:
        rng = np.random.default_rng(st.seed)
    return clean + st.noise_sigma * rng.standard_normal(clean.shape)


def generalization_error(spec, X, Z, alpha, alpha_star) -> float:
    """``(1/n) ||K(X, Z)(alpha - alpha*)||_F^2``, the population-risk proxy."""
    alpha = as_weight_matrix(alpha, "alpha")
    alpha_star = as_weight_matrix(alpha_star, "alpha_star")
    r = kernel_matrix(spec, as_float_matrix(X, "X"), as_float_matrix(Z, "Z")) @ (
        alpha - alpha_star
    )
    return float(np.sum(r * r) / np.asarray(X).shape[0])


def montecarlo_estimator_stats(spec, X, Z, q: int, st: StudentTeacherSpec, n_draws: int) -> dict:
    """Empirical mean and spread of the fixed-point estimator over noise draws.

    Returns ``mean_alpha`` (p, c), its elementwise ``alpha_stderr``, and
    ``mean_sqerr_over_sigma2``.  With ``sigma = 0`` the squared error cannot
    be normalized, so the raw mean squared error is reported instead.
    Each draw consumes an independent child stream of ``st.seed``, so the
    result does not depend on evaluation order.
    """
    if n_draws < 2:
        raise ValueError(f"n_draws must be >= 2, got {n_draws}")
    op = FixedPointOperator(spec, X, Z, q)
    clean = op.B @ st.alpha_star
    streams = np.random.SeedSequence(st.seed).spawn(n_draws)

    total = np.zeros_like(st.alpha_star)
    total_sq = np.zeros_like(st.alpha_star)
    sqerr = 0.0
    for child in streams:
        g = np.random.default_rng(child).standard_normal(clean.shape)
        y = clean + st.noise_sigma * g
        a = op.alpha_inf(y)
        total += a
        total_sq += a * a
        d = a - st.alpha_star
        sqerr += float(np.sum(d * d))

    mean_alpha = total / n_draws
    var_alpha = np.maximum(total_sq / n_draws - mean_alpha**2, 0.0)
    stderr = np.sqrt(var_alpha / n_draws)
    mean_sqerr = sqerr / n_draws
    if st.noise_sigma > 0:
        mean_sqerr /= st.noise_sigma**2
    return {
        "mean_alpha": mean_alpha,
        "alpha_stderr": stderr,
        "mean_sqerr_over_sigma2": mean_sqerr,
        "normalized": st.noise_sigma > 0,
    }


def contraction_estimate(
    residuals,
    *,
    nu: float | None = None,
    lam_top: float | None = None,
    lam_tail: float | None = None,
    sigma_max: float | None = None,
    steps: int | None = None,
) -> dict:
    """Fit a geometric contraction factor to a residual history.

    ``rho_fit`` is the geometric-mean step ratio; a run that has already hit
    zero reports 0.  When the spectral quantities are supplied, the partial
    sum ``sum_i (1 - nu (lam_top - lam_tail))^i sigma_max^2 / lam_tail`` is
    attached as ``bound`` for inspection only; it is a loose printed bound,
    not an assertion.
    """
    r = np.asarray(residuals, dtype=np.float64)
    if r.ndim != 1 or r.size < 5:
        raise ValueError("need at least 5 residuals")
    if np.any(r < 0):
        raise ValueError("residuals must be nonnegative")
    if np.any(r == 0):
        rho = 0.0
    else:
        rho = float((r[-1] / r[0]) ** (1.0 / (r.size - 1)))

    bound = None
    spectral = (nu, lam_top, lam_tail, sigma_max, steps)
    if all(v is not None for v in spectral):
        ratio = 1.0 - nu * (lam_top - lam_tail)
        terms = ratio ** np.arange(steps)
        bound = float(np.sum(terms) * sigma_max**2 / lam_tail)
    return {"rho_fit": rho, "bound": bound}
