"""Preconditioned SGD solver for kernel linear systems ``K(Z, Z) theta = h``.

Each iteration takes a stochastic gradient step on a row minibatch and then
a low-rank gradient correction on the rows of a fixed Nystrom subsample:

    g_m      = K(Z_m, Z) theta - h_m
    theta_m -= (eta / m) g_m
    theta_s += (eta / m) E diag(D) E^T K(Z_s, Z_m) g_m

where ``(E, Lam, lam_tail)`` is the top-q eigensystem of ``K(Z_s, Z_s)`` and
``D_i = (1 - lam_tail / lam_i) / (s lam_i)``.  With the full subsample and a
full batch the two pieces combine into one flattened step
``theta -= (eta / p) (I - Q)(K(Z, Z) theta - h)``, which is what makes the
correction the cheap stand-in for exact preconditioning.

The batch size defaults to the critical value ``ceil(beta / lam_tail)``
(``beta`` being the largest kernel diagonal), optionally clipped by a batch
cap.  When the cap binds, the printed step-size rule ``beta / (2m)`` is
dimensionally suspect; the ``corrected`` rule ``m / (2 beta)`` is offered
behind ``lr_rule`` and both coincide with the uncapped second-case formula
otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kernels import kernel_diag_max, kernel_matrix
from .spectral import TopQEigensystem, top_q_eigensystem
from .validation import as_float_matrix, as_weight_matrix

PAPER_RULE = "paper"
CORRECTED_RULE = "corrected"

_LR_RULES = (PAPER_RULE, CORRECTED_RULE)


@dataclass
class Ep2Solver:
    """Frozen setup state for one linear system's centers.

    ``theta`` itself is owned by the caller of :func:`ep2_solve`; a solver
    instance only carries the geometry, preconditioner, and step sizes.
    """

    spec: object
    centers: np.ndarray             # (p, d)
    nystrom_indices: np.ndarray     # (s,) sorted rows of `centers`
    eig: TopQEigensystem            # of K(Z_s, Z_s)
    d_weights: np.ndarray           # (q,) correction scalings
    beta: float
    batch_size: int
    eta: float
    lr_rule: str
    shuffle_seed: np.random.SeedSequence

    @property
    def p(self) -> int:
        return self.centers.shape[0]

    @property
    def nystrom_points(self) -> np.ndarray:
        return self.centers[self.nystrom_indices]


def correction_weights(eig: TopQEigensystem, s: int) -> np.ndarray:
    """``D_i = (1 - lam_tail / lam_i) / (s lam_i)`` for the top-q directions."""
    if eig.q == 0:
        return np.zeros(0)
    lam = eig.eigenvalues
    return (1.0 - eig.tail_eigenvalue / lam) / (s * lam)


def critical_batch_size(beta: float, tail_eigenvalue: float, batch_cap=None) -> int:
    """``min(ceil(beta / lam_tail), cap)``; the cap is required if the tail is 0."""
    if tail_eigenvalue > 0:
        m = math.ceil(beta / tail_eigenvalue)
    elif batch_cap is not None:
        m = batch_cap
    else:
        raise ValueError("tail eigenvalue is zero and no batch cap was given")
    if batch_cap is not None:
        m = min(m, batch_cap)
    return max(int(m), 1)


def learning_rate(beta: float, tail_eigenvalue: float, m: int, lr_rule: str = PAPER_RULE) -> float:
    """Two-case step size: capped batches use the rule named by ``lr_rule``."""
    if lr_rule not in _LR_RULES:
        raise ValueError(f"unknown lr_rule {lr_rule!r}; expected one of {_LR_RULES}")
    below_critical = tail_eigenvalue <= 0 or m < beta / tail_eigenvalue
    if below_critical:
        if lr_rule == PAPER_RULE:
            return beta / (2.0 * m)
        return m / (2.0 * beta)
    return 0.99 * m / (beta + (m - 1) * tail_eigenvalue)


def ep2_setup(
    spec,
    Z,
    s: int,
    q: int,
    batch_cap: int | None = None,
    *,
    lr_rule: str = PAPER_RULE,
    seed=0,
    batch_size: int | None = None,
    eta: float | None = None,
) -> Ep2Solver:
    """Prepare the preconditioner and step sizes for ``K(Z, Z) theta = h``.

    :param spec: kernel specification
    :param Z: centers, shape (p, d)
    :param s: Nystrom subsample size, q < s <= p
    :param q: preconditioner level
    :param batch_cap: optional hard upper bound on the batch size
    :param lr_rule: "paper" or "corrected"; applies only when the cap binds
    :param seed: seeds both the subsample choice and minibatch shuffling
    :param batch_size: override the critical batch size (used by tests and
        by callers that need a full-batch deterministic iteration)
    :param eta: override the learning rate
    """
    Z = as_float_matrix(Z, "Z")
    p = Z.shape[0]
    if not 0 <= q < s:
        raise ValueError(f"need 0 <= q < s, got q={q}, s={s}")
    if s > p:
        raise ValueError(f"subsample size s={s} exceeds the number of centers p={p}")

    root = np.random.SeedSequence(seed) if not isinstance(seed, np.random.SeedSequence) else seed
    subset_seq, shuffle_seq = root.spawn(2)
    ids = np.sort(np.random.default_rng(subset_seq).choice(p, size=s, replace=False))
    Zs = Z[ids]

    eig = top_q_eigensystem(kernel_matrix(spec, Zs, Zs), q)
    beta = kernel_diag_max(spec, Zs)
    m = batch_size if batch_size is not None else critical_batch_size(
        beta, eig.tail_eigenvalue, batch_cap
    )
    if not 1 <= m <= p:
        raise ValueError(f"batch size must be in [1, {p}], got {m}")
    if eta is None:
        eta = learning_rate(beta, eig.tail_eigenvalue, m, lr_rule)

    return Ep2Solver(
        spec=spec,
        centers=Z,
        nystrom_indices=ids,
        eig=eig,
        d_weights=correction_weights(eig, s),
        beta=beta,
        batch_size=int(m),
        eta=float(eta),
        lr_rule=lr_rule,
        shuffle_seed=shuffle_seq,
    )


def ep2_iteration(solver: Ep2Solver, theta: np.ndarray, h: np.ndarray, batch_ids) -> np.ndarray:
    """One stochastic step plus gradient correction, in place on ``theta``."""
    batch_ids = np.asarray(batch_ids)
    if batch_ids.size == 0 or batch_ids.min() < 0 or batch_ids.max() >= solver.p:
        raise IndexError(f"batch indices out of range for p={solver.p}")
    Z = solver.centers
    km = kernel_matrix(solver.spec, Z[batch_ids], Z)
    g = km @ theta - h[batch_ids]
    step = solver.eta / solver.batch_size
    theta[batch_ids] -= step * g
    if solver.eig.q:
        # d_weights carry a 1/s factor; the flattening operator needs
        # (1 - tail/lam)/lam, so the correction is scaled by s * step.
        s = solver.nystrom_indices.shape[0]
        E = solver.eig.eigenvectors
        t = km[:, solver.nystrom_indices].T @ g
        theta[solver.nystrom_indices] += (s * step) * (
            E @ (solver.d_weights[:, None] * (E.T @ t))
        )
    return theta


def ep2_solve(solver: Ep2Solver, h, epochs: int = 1) -> np.ndarray:
    """Approximately solve ``K(Z, Z) theta = h`` from zero initialization.

    Runs ``epochs`` passes over shuffled minibatches (the last short batch is
    kept).  Repeat calls on one solver replay the same shuffles, so results
    are a pure function of (solver, h, epochs).
    """
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    h_arr = as_weight_matrix(h, "h")
    if h_arr.shape[0] != solver.p:
        raise ValueError(f"h has {h_arr.shape[0]} rows, expected {solver.p}")
    theta = np.zeros_like(h_arr)
    rng = np.random.default_rng(solver.shuffle_seed)
    for _ in range(epochs):
        perm = rng.permutation(solver.p)
        for start in range(0, solver.p, solver.batch_size):
            ep2_iteration(solver, theta, h_arr, perm[start : start + solver.batch_size])
    return theta[:, 0] if np.asarray(h).ndim == 1 else theta
