"""Outer training loops for general kernel models.

Four ways to fit ``f(x) = sum_j alpha_j K(x, z_j)`` to data by square loss:

* exact variant: full-batch projected preconditioned gradient descent,
    alpha <- alpha - eta K(Z,Z)^-1 K(Z,X) (I - Q) (K(X,Z) alpha - y)
  with Q the exact flattener over the training set;

* stochastic variant: minibatch gradients, a Nystrom flattener built from an
  s-point subsample, the precomputed composite C = K(Z, X_s) Q_s, and an
  inexact projection (inner solver) for K(Z,Z) theta = h:
    g_m = K(X_m, Z) alpha - y_m
    h   = K(Z, X_m) g_m - C K(X_s, X_m) g_m
    alpha <- alpha - (n/m) eta theta,   theta ~= K(Z,Z)^-1 h;

* a classical full-batch gradient-descent baseline on the (optionally
  ridge-regularized) objective, with no projection;

* a preconditioned Richardson projector, usable as the inner solver.

All loops are deterministic given the config seed; every derived random
stream (subsampling, shuffling, inner solver) is spawned from it.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
import scipy.linalg

from .ep2 import PAPER_RULE, Ep2Solver, ep2_setup, ep2_solve
from .kernels import Dataset, kernel_apply, kernel_matrix
from .model import GeneralKernelModel, evaluate as evaluate_model
from .preconditioner import (
    EXACT_Q,
    NYSTROM_QS,
    NystromPreconditioner,
    apply_I_minus_Q,
    build_C,
    build_preconditioner,
)
from .spectral import top_q_eigensystem
from .validation import as_float_matrix, as_weight_matrix, check_same_features

EP3 = "ep3"
EP3_EXACT = "ep3-exact"
CLASSICAL_GD = "gd"

TRAIN_VARIANTS = (EP3, EP3_EXACT, CLASSICAL_GD)

# Dense caps for the exact path, which holds K(X,X) and factorizes K(Z,Z).
MAX_EXACT_N = 5000
MAX_EXACT_P = 2000

_DIVERGENCE_NORM = 1e12


class DivergenceError(RuntimeError):
    """Training iterate became non-finite or exploded."""

    def __init__(self, message, lr_bound: float | None = None):
        super().__init__(message)
        self.lr_bound = lr_bound


@dataclass(frozen=True)
class ExactProjection:
    """Projection via a cached dense factorization of K(Z, Z)."""


@dataclass(frozen=True)
class Ep2Projection:
    """Inexact projection: a few epochs of the preconditioned SGD solver.

    ``s``/``q`` default to ``min(p, 1000)`` and a tenth of that, following
    the usual source-to-level sizing.
    """

    epochs: int = 1
    s: int | None = None
    q: int | None = None
    batch_cap: int | None = None
    lr_rule: str = PAPER_RULE


@dataclass(frozen=True)
class RichardsonProjection:
    """Inexact projection via preconditioned Richardson iteration.

    ``nu = None`` selects 1 over the tail eigenvalue of the level-``q``
    flattener built from K(Z, Z).
    """

    steps: int = 10
    nu: float | None = None
    q: int = 0


Projection = Union[ExactProjection, Ep2Projection, RichardsonProjection]


@dataclass
class TrainConfig:
    q_data: int = 0                      # data-side preconditioner level
    s: int | None = None                 # Nystrom subsample size (None = n)
    m: int | None = None                 # outer batch size (None = full batch)
    eta: float | str = "auto"
    epochs: int = 1
    projection: Projection = field(default_factory=ExactProjection)
    seed: int = 0
    tol: float = 0.0                     # early stop on |delta train MSE| < tol; 0 = off
    ridge: float = 0.0                   # classical GD only


@dataclass
class TrainState:
    alpha: np.ndarray
    iteration: int = 0
    residual_history: list = field(default_factory=list)  # (iteration, train MSE) pairs
    config: TrainConfig | None = None


def _power_lambda_max(matvec, dim: int, iters: int = 96, seed: int = 0) -> float:
    """Largest eigenvalue of a PSD operator by seeded power iteration."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = matvec(v)
        lam = float(np.linalg.norm(w))
        if lam == 0.0:
            return 0.0
        v = w / lam
    return lam


def _duplicate_rows(Z: np.ndarray) -> list[tuple[int, int]]:
    order = np.lexsort(Z.T[::-1])
    pairs = []
    for a, b in zip(order[:-1], order[1:]):
        if np.array_equal(Z[a], Z[b]):
            pairs.append((min(a, b), max(a, b)))
    return pairs


def _factorize_kzz(spec, Z: np.ndarray):
    dups = _duplicate_rows(Z)
    if dups:
        shown = ", ".join(f"{i}=={j}" for i, j in dups[:8])
        raise ValueError(f"K(Z,Z) is singular: duplicate center rows ({shown})")
    kzz = kernel_matrix(spec, Z, Z)
    try:
        factor = scipy.linalg.cho_factor(kzz)
    except np.linalg.LinAlgError as exc:
        raise ValueError("K(Z,Z) is numerically singular; centers may be too close") from exc
    return kzz, factor


def _check_alpha(alpha: np.ndarray, lr_bound_fn=None) -> None:
    if np.all(np.isfinite(alpha)) and np.linalg.norm(alpha) <= _DIVERGENCE_NORM:
        return
    bound = None
    message = "training diverged: weights became non-finite or exceeded 1e12"
    if lr_bound_fn is not None:
        bound = lr_bound_fn()
        message += f"; stable learning rates satisfy eta < {bound:.6g}"
    raise DivergenceError(message, lr_bound=bound)


# ---------------------------------------------------------------------------
# Exact variant


@dataclass
class Ep3ExactSetup:
    spec: object
    X: np.ndarray
    y: np.ndarray
    Z: np.ndarray
    q: int
    pc: Optional[NystromPreconditioner]   # exact flattener over X; None when q=0
    kzz: np.ndarray
    kzz_factor: tuple
    kxz: np.ndarray                        # cached K(X, Z)
    eta: float
    data_tail: float                       # lambda_{q+1} of K(X,X) (q>0) or lambda_1 estimate

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.Z.shape[0]


def ep3_exact_setup(spec, X, y, Z, q: int, eta: float | str = "auto") -> Ep3ExactSetup:
    """Precompute everything the exact full-batch iteration reuses.

    Builds the level-``q`` flattener from K(X, X), caches K(X, Z), and
    factorizes K(Z, Z) once for the repeated projection solves.
    """
    X = as_float_matrix(X, "X")
    y = as_weight_matrix(y, "y")
    Z = as_float_matrix(Z, "Z")
    check_same_features(X, Z, "X", "Z")
    n, p = X.shape[0], Z.shape[0]
    if y.shape[0] != n:
        raise ValueError(f"y has {y.shape[0]} rows but X has {n}")
    if n > MAX_EXACT_N or p > MAX_EXACT_P:
        raise ValueError(
            f"exact path caps are n <= {MAX_EXACT_N}, p <= {MAX_EXACT_P}; got n={n}, p={p}"
        )

    kzz, factor = _factorize_kzz(spec, Z)
    kxz = kernel_matrix(spec, X, Z)

    pc = None
    if q > 0:
        pc = build_preconditioner(spec, X, q, EXACT_Q)
        tail = pc.tail_eigenvalue
    else:
        # No flattening: only the top data eigenvalue is needed, and only to
        # auto-scale eta, so estimate it without assembling K(X,X).
        tail = _power_lambda_max(lambda v: kernel_apply(spec, X, X, v)[:, 0], n)

    if eta == "auto":
        if tail <= 0:
            raise ValueError("cannot auto-scale eta: flattened spectrum estimate is zero")
        eta_val = 1.0 / tail
    else:
        eta_val = float(eta)
        if eta_val <= 0:
            raise ValueError(f"eta must be positive, got {eta_val}")

    return Ep3ExactSetup(
        spec=spec, X=X, y=y, Z=Z, q=q, pc=pc, kzz=kzz, kzz_factor=factor,
        kxz=kxz, eta=eta_val, data_tail=float(tail),
    )


def exact_lr_bound(setup: Ep3ExactSetup) -> float:
    """``2 / lambda_max(K(Z,X) (I - Q) K(X,Z))`` by power iteration."""

    def matvec(v):
        w = setup.kxz @ v
        if setup.pc is not None:
            w = apply_I_minus_Q(setup.pc, w)
        return setup.kxz.T @ w

    lam = _power_lambda_max(matvec, setup.p)
    return np.inf if lam == 0 else 2.0 / lam


def ep3_exact_step(state: TrainState, setup: Ep3ExactSetup) -> TrainState:
    """One full-batch exact-projection update; records the entering train MSE."""
    alpha = state.alpha
    g = setup.kxz @ alpha - setup.y
    mse = float(np.sum(g * g) / setup.n)
    pg = apply_I_minus_Q(setup.pc, g) if setup.pc is not None else g
    theta = scipy.linalg.cho_solve(setup.kzz_factor, setup.kxz.T @ pg)
    state.alpha = alpha - setup.eta * theta
    _check_alpha(state.alpha, lambda: exact_lr_bound(setup))
    state.residual_history.append((state.iteration, mse))
    state.iteration += 1
    return state


# ---------------------------------------------------------------------------
# Stochastic variant


@dataclass
class _ProjectionState:
    kind: str
    kzz: np.ndarray | None = None
    kzz_factor: tuple | None = None
    ep2_solver: Ep2Solver | None = None
    ep2_epochs: int = 1
    richardson_pc: NystromPreconditioner | None = None
    richardson_nu: float = 0.0
    richardson_steps: int = 0


@dataclass
class Ep3Setup:
    spec: object
    X: np.ndarray
    y: np.ndarray
    Z: np.ndarray
    subsample_indices: np.ndarray          # rows of X forming X_s, sorted
    pc: NystromPreconditioner              # nystrom flattener over X_s
    C: np.ndarray                          # (p, s) composite K(Z, X_s) Q_s
    eta: float
    m: int
    projection: _ProjectionState
    shuffle_seed: np.random.SeedSequence

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.Z.shape[0]

    @property
    def Xs(self) -> np.ndarray:
        return self.X[self.subsample_indices]


def _init_projection(spec, Z, projection: Projection, seed_seq) -> _ProjectionState:
    p = Z.shape[0]
    if isinstance(projection, ExactProjection):
        if p > MAX_EXACT_P:
            raise ValueError(f"exact projection caps p at {MAX_EXACT_P}, got {p}")
        kzz, factor = _factorize_kzz(spec, Z)
        return _ProjectionState(kind="exact", kzz=kzz, kzz_factor=factor)
    if isinstance(projection, Ep2Projection):
        s_model = projection.s if projection.s is not None else min(p, 1000)
        if projection.q is not None:
            q_model = projection.q
        else:
            q_model = min(s_model - 1, max(1, s_model // 10)) if s_model > 1 else 0
        solver = ep2_setup(
            spec, Z, s_model, q_model, projection.batch_cap,
            lr_rule=projection.lr_rule, seed=seed_seq,
        )
        return _ProjectionState(kind="ep2", ep2_solver=solver, ep2_epochs=projection.epochs)
    if isinstance(projection, RichardsonProjection):
        kzz = kernel_matrix(spec, Z, Z)
        pc2 = NystromPreconditioner(
            eig=top_q_eigensystem(kzz, projection.q),
            anchor_points=Z,
            mode=EXACT_Q,
        )
        nu = projection.nu
        if nu is None:
            if pc2.tail_eigenvalue <= 0:
                raise ValueError("cannot auto-scale nu: tail eigenvalue of K(Z,Z) is zero")
            nu = 1.0 / pc2.tail_eigenvalue
        return _ProjectionState(
            kind="richardson", kzz=kzz, richardson_pc=pc2,
            richardson_nu=float(nu), richardson_steps=projection.steps,
        )
    raise TypeError(f"unknown projection {projection!r}")


def ep3_setup(spec, X, y, Z, config: TrainConfig) -> Ep3Setup:
    """Sample the subsample, build the data flattener and C, set up projection."""
    X = as_float_matrix(X, "X")
    y = as_weight_matrix(y, "y")
    Z = as_float_matrix(Z, "Z")
    check_same_features(X, Z, "X", "Z")
    n = X.shape[0]
    if y.shape[0] != n:
        raise ValueError(f"y has {y.shape[0]} rows but X has {n}")

    s = config.s if config.s is not None else n
    m = config.m if config.m is not None else n
    if not 0 < m <= n:
        raise ValueError(f"batch size m must be in [1, {n}], got {m}")
    if s > n:
        raise ValueError(f"subsample size s={s} exceeds n={n}")
    if not 0 <= config.q_data < s:
        raise ValueError(f"need 0 <= q_data < s, got q_data={config.q_data}, s={s}")

    root = np.random.SeedSequence(config.seed)
    subsample_seq, shuffle_seq, inner_seq = root.spawn(3)
    ids = np.sort(np.random.default_rng(subsample_seq).choice(n, size=s, replace=False))

    pc = build_preconditioner(spec, X[ids], config.q_data, NYSTROM_QS)
    C = build_C(spec, Z, pc)

    if config.eta == "auto":
        tail = pc.tail_eigenvalue
        if tail <= 0:
            raise ValueError("cannot auto-scale eta: subsample tail eigenvalue is zero")
        # K(X_s,X_s) estimates (s/n) K(X,X), so the full-data tail is (n/s) tail.
        eta = s / (n * tail)
    else:
        eta = float(config.eta)
        if eta <= 0:
            raise ValueError(f"eta must be positive, got {eta}")

    projection = _init_projection(spec, Z, config.projection, inner_seq)
    return Ep3Setup(
        spec=spec, X=X, y=y, Z=Z, subsample_indices=ids, pc=pc, C=C,
        eta=eta, m=m, projection=projection, shuffle_seed=shuffle_seq,
    )


def _project(setup_projection: _ProjectionState, h: np.ndarray) -> np.ndarray:
    ps = setup_projection
    if ps.kind == "exact":
        return scipy.linalg.cho_solve(ps.kzz_factor, h)
    if ps.kind == "ep2":
        return ep2_solve(ps.ep2_solver, h, epochs=ps.ep2_epochs)
    return richardson_project(
        ps.richardson_pc, ps.kzz, h, ps.richardson_nu, ps.richardson_steps
    )


def ep3_step(state: TrainState, setup: Ep3Setup, batch) -> TrainState:
    """One stochastic step: minibatch gradient, flattening through C, projection."""
    Xm, ym = batch
    Xm = np.asarray(Xm, dtype=np.float64)
    ym = np.asarray(ym, dtype=np.float64)
    if ym.ndim == 1:
        ym = ym[:, None]
    m = Xm.shape[0]

    kmz = kernel_matrix(setup.spec, Xm, setup.Z)
    g = kmz @ state.alpha - ym
    h = kmz.T @ g - setup.C @ (kernel_matrix(setup.spec, setup.Xs, Xm) @ g)
    theta = _project(setup.projection, h)
    state.alpha = state.alpha - (setup.n / m) * setup.eta * theta
    _check_alpha(state.alpha)
    state.iteration += 1
    return state


def richardson_project(
    pc2: NystromPreconditioner | None, kzz, h, nu: float, steps: int
) -> np.ndarray:
    """Run ``theta <- theta - nu (I - Q2)(K(Z,Z) theta - h)`` for ``steps`` steps.

    Starts from zero; contracts when ``nu < 2 / lam_tail`` of the flattened
    system.  ``pc2 = None`` means no preconditioning (Q2 = 0), as does a
    level-0 flattener.
    """
    kzz = as_float_matrix(kzz, "kzz")
    h_arr = as_weight_matrix(h, "h")
    if h_arr.shape[0] != kzz.shape[0]:
        raise ValueError(f"h has {h_arr.shape[0]} rows but K(Z,Z) is {kzz.shape[0]} wide")
    if pc2 is not None and pc2.mode != EXACT_Q:
        raise ValueError("richardson_project expects an exact-mode flattener over K(Z,Z)")
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    theta = np.zeros_like(h_arr)
    for _ in range(steps):
        r = kzz @ theta - h_arr
        if pc2 is not None:
            r = apply_I_minus_Q(pc2, r)
        theta = theta - nu * r
    return theta[:, 0] if np.asarray(h).ndim == 1 else theta


# ---------------------------------------------------------------------------
# Classical gradient-descent baseline


def classical_gd_step(
    state: TrainState, spec, X, y, Z, eta: float, ridge: float = 0.0,
    *, kxz=None, kzz=None,
) -> TrainState:
    """Full-batch gradient descent on the (ridge-regularized) square loss.

    ``kxz``/``kzz`` accept precomputed kernel matrices so loops can cache
    them; otherwise they are assembled on the fly.
    """
    B = kxz if kxz is not None else kernel_matrix(spec, X, Z)
    y = as_weight_matrix(y, "y")
    g = B @ state.alpha - y
    mse = float(np.sum(g * g) / B.shape[0])
    update = B.T @ g
    if ridge != 0.0:
        K = kzz if kzz is not None else kernel_matrix(spec, Z, Z)
        update = update + ridge * (K @ state.alpha)
    state.alpha = state.alpha - eta * update
    _check_alpha(state.alpha)
    state.residual_history.append((state.iteration, mse))
    state.iteration += 1
    return state


def classical_gd_lr_bound(spec, X, Z, ridge: float = 0.0, *, kxz=None) -> float:
    """``2 / lambda_max(K(Z,X) K(X,Z) + ridge K(Z,Z))`` by power iteration."""
    B = kxz if kxz is not None else kernel_matrix(spec, X, Z)
    kzz = kernel_matrix(spec, Z, Z) if ridge != 0.0 else None

    def matvec(v):
        w = B.T @ (B @ v)
        if kzz is not None:
            w = w + ridge * (kzz @ v)
        return w

    lam = _power_lambda_max(matvec, Z.shape[0] if hasattr(Z, "shape") else B.shape[1])
    return np.inf if lam == 0 else 2.0 / lam


# ---------------------------------------------------------------------------
# Packaged loop


def _epoch_record(epoch, model, X, y, test, t0):
    r = kernel_apply(model.spec, X, model.centers, model.weights) - y
    rec = {
        "epoch": epoch,
        "train_mse": float(np.sum(r * r) / X.shape[0]),
        "test_mse": None,
        "accuracy": None,
        "seconds": time.perf_counter() - t0,
    }
    if test is not None:
        scores = evaluate_model(model, test)
        rec["test_mse"] = scores["mse"]
        rec["accuracy"] = scores["accuracy"]
    return rec


def train(spec, dataset: Dataset, Z, config: TrainConfig, variant: str = EP3, test=None):
    """Run the selected training loop and return ``(model, history)``.

    History holds one record per epoch: epoch index (1-based), train MSE,
    optional test MSE and accuracy, and wall-clock seconds.  With
    ``config.tol > 0`` training stops once the epoch-to-epoch train MSE
    change falls below it.  Everything is deterministic given
    ``config.seed`` at a fixed thread count.
    """
    if variant not in TRAIN_VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {TRAIN_VARIANTS}")
    X, y = dataset.features, dataset.targets
    Z = as_float_matrix(Z, "Z")
    state = TrainState(alpha=np.zeros((Z.shape[0], y.shape[1])), config=config)
    model = GeneralKernelModel(spec=spec, centers=Z, weights=state.alpha)
    history: list[dict] = []

    if config.epochs == 0:
        return model, history

    if variant == EP3_EXACT:
        setup = ep3_exact_setup(spec, X, y, Z, config.q_data, config.eta)
        step = lambda: ep3_exact_step(state, setup)
        steps_per_epoch = 1
    elif variant == EP3:
        setup = ep3_setup(spec, X, y, Z, config)
        rng = np.random.default_rng(setup.shuffle_seed)

        def run_epoch_ep3():
            perm = rng.permutation(setup.n)
            for start in range(0, setup.n, setup.m):
                ids = perm[start : start + setup.m]
                ep3_step(state, setup, (X[ids], y[ids]))
    else:
        kxz = kernel_matrix(spec, X, Z)
        kzz = kernel_matrix(spec, Z, Z) if config.ridge != 0.0 else None
        if config.eta == "auto":
            eta = classical_gd_lr_bound(spec, X, Z, config.ridge, kxz=kxz) / 2.0
        else:
            eta = float(config.eta)
        step = lambda: classical_gd_step(
            state, spec, X, y, Z, eta, config.ridge, kxz=kxz, kzz=kzz
        )
        steps_per_epoch = 1

    prev_mse = None
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        if variant == EP3:
            run_epoch_ep3()
        else:
            for _ in range(steps_per_epoch):
                step()
        model.weights = state.alpha
        rec = _epoch_record(epoch, model, X, y, test, t0)
        history.append(rec)
        if config.tol > 0 and prev_mse is not None and abs(prev_mse - rec["train_mse"]) < config.tol:
            break
        prev_mse = rec["train_mse"]

    return model, history
