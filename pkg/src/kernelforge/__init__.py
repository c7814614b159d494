"""Training general kernel models at scale decoupled from the training set.

A general kernel model is ``f(x) = sum_j alpha_j K(x, z_j)`` whose centers
``Z`` are chosen independently of the data.  This package fits such models
by projected preconditioned (stochastic) gradient descent, provides the
inner preconditioned-SGD linear solver and classical baselines, and ships
the fixed-point / variance / generalization analysis as executable
diagnostics plus a CLI for reproducible runs.
"""

from .analysis import (
    FixedPointReport,
    SingularMatrixError,
    StudentTeacherSpec,
    contraction_estimate,
    fixed_point,
    generalization_error,
    montecarlo_estimator_stats,
    student_teacher_sample,
)
from .data_io import CenterSelection, load_csv, make_blobs, save_csv, select_centers
from .ep2 import Ep2Solver, ep2_iteration, ep2_setup, ep2_solve
from .estimators import GeneralKernelClassifier, GeneralKernelRegressor
from .kernels import (
    Dataset,
    KernelSpec,
    eval_kernel,
    kernel_apply,
    kernel_diag_max,
    kernel_matrix,
)
from .model import (
    GeneralKernelModel,
    classify,
    evaluate,
    load_model,
    predict,
    save_model,
)
from .preconditioner import (
    NystromPreconditioner,
    apply_I_minus_Q,
    apply_Qs,
    build_C,
    build_preconditioner,
)
from .spectral import TopQEigensystem, nystrom_coefficients, top_q_eigensystem
from .trainer import (
    DivergenceError,
    Ep2Projection,
    ExactProjection,
    RichardsonProjection,
    TrainConfig,
    TrainState,
    classical_gd_step,
    ep3_exact_setup,
    ep3_exact_step,
    ep3_setup,
    ep3_step,
    richardson_project,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "CenterSelection",
    "Dataset",
    "DivergenceError",
    "Ep2Projection",
    "Ep2Solver",
    "ExactProjection",
    "FixedPointReport",
    "GeneralKernelClassifier",
    "GeneralKernelModel",
    "GeneralKernelRegressor",
    "KernelSpec",
    "NystromPreconditioner",
    "RichardsonProjection",
    "SingularMatrixError",
    "StudentTeacherSpec",
    "TopQEigensystem",
    "TrainConfig",
    "TrainState",
    "apply_I_minus_Q",
    "apply_Qs",
    "build_C",
    "build_preconditioner",
    "classical_gd_step",
    "classify",
    "contraction_estimate",
    "ep2_iteration",
    "ep2_setup",
    "ep2_solve",
    "ep3_exact_setup",
    "ep3_exact_step",
    "ep3_setup",
    "ep3_step",
    "eval_kernel",
    "evaluate",
    "fixed_point",
    "generalization_error",
    "kernel_apply",
    "kernel_diag_max",
    "kernel_matrix",
    "load_csv",
    "load_model",
    "make_blobs",
    "montecarlo_estimator_stats",
    "nystrom_coefficients",
    "predict",
    "richardson_project",
    "save_csv",
    "save_model",
    "select_centers",
    "student_teacher_sample",
    "top_q_eigensystem",
    "train",
]
