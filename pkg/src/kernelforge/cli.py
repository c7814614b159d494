"""Command-line entry point for reproducible batch runs.

Subcommands: ``synth`` (write synthetic datasets), ``train`` (fit a model
and emit a run record), ``fixed-point`` (closed-form limit and variance
report as JSON), ``benchmark`` (sweep model and data sizes into a CSV).

Exit codes: 0 success, 1 usage or I/O error, 2 divergence guard.

Only the standard library is imported at module level: ``--threads`` (or the
``KERNELFORGE_THREADS`` environment variable) must cap the BLAS thread pools
before numpy is first imported, so all numeric imports happen inside the
command handlers.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # exit code 2 is reserved for divergence; usage errors are 1
        raise _UsageError(message)


def _configure_threads(argv) -> None:
    threads = None
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            threads = argv[i + 1]
        elif arg.startswith("--threads="):
            threads = arg.split("=", 1)[1]
    if threads is None:
        threads = os.environ.get("KERNELFORGE_THREADS")
    if threads:
        for var in _THREAD_VARS:
            os.environ[var] = str(threads)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None,
                   help="cap BLAS threads (env fallback: KERNELFORGE_THREADS)")


def _parse_eta(value: str):
    if value == "auto":
        return "auto"
    try:
        return float(value)
    except ValueError:
        raise _UsageError(f"--eta must be 'auto' or a number, got {value!r}") from None


def _parse_centers(value: str):
    if value.startswith("file:"):
        return ("file", value[5:])
    for method in ("random", "kmeans"):
        if value.startswith(method + ":"):
            try:
                return (method, int(value.split(":", 1)[1]))
            except ValueError:
                raise _UsageError(f"--centers {value!r}: count must be an integer") from None
    raise _UsageError(f"--centers must be file:PATH, random:P or kmeans:P, got {value!r}")


def _parse_projection(value: str, lr_rule: str):
    from .trainer import Ep2Projection, ExactProjection, RichardsonProjection

    if value == "exact":
        return ExactProjection()
    if value.startswith("ep2:"):
        try:
            return Ep2Projection(epochs=int(value.split(":", 1)[1]), lr_rule=lr_rule)
        except ValueError:
            raise _UsageError(f"--proj {value!r}: epochs must be an integer") from None
    if value.startswith("richardson:"):
        parts = value.split(":", 1)[1].split(",")
        if len(parts) != 2:
            raise _UsageError(f"--proj {value!r}: expected richardson:NU,T")
        try:
            nu = None if parts[0] == "auto" else float(parts[0])
            return RichardsonProjection(nu=nu, steps=int(parts[1]))
        except ValueError:
            raise _UsageError(f"--proj {value!r}: expected richardson:NU,T") from None
    raise _UsageError(f"--proj must be ep2:T, exact or richardson:NU,T, got {value!r}")


def _load_matrix(path):
    import numpy as np

    try:
        return np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except ValueError as exc:
        raise ValueError(f"{path}: not a numeric CSV matrix ({exc})") from exc


def _resolve_centers(spec_pair, X, seed):
    from .data_io import CenterSelection, select_centers
    from .validation import as_float_matrix

    kind, value = spec_pair
    if kind == "file":
        return as_float_matrix(_load_matrix(value), "centers")
    centers, _ = select_centers(X, CenterSelection(method=kind, p=value, seed=seed))
    return centers


def _json_ready(obj):
    import numpy as np

    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    return obj


def _write_json(payload, path):
    text = json.dumps(_json_ready(payload), indent=2, sort_keys=True)
    if path is None or path == "-":
        print(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    import numpy as np

    from .analysis import StudentTeacherSpec, student_teacher_sample
    from .data_io import make_blobs, save_csv
    from .kernels import Dataset, KernelSpec

    root = np.random.SeedSequence(args.seed)
    sidecar = {"kind": args.kind, "seed": args.seed, "n": args.n, "d": args.d}

    if args.kind == "blobs":
        # one draw, then split, so train and test share the blob means
        full = make_blobs(args.n + args.n_test, args.d, args.classes, args.spread,
                          seed=args.seed)
        train_set = Dataset(full.features[: args.n], full.targets[: args.n])
        test_set = None
        if args.n_test:
            test_set = Dataset(full.features[args.n :], full.targets[args.n :])
        sidecar.update({"classes": args.classes, "spread": args.spread,
                        "label_columns": train_set.c})
    else:
        spec = KernelSpec(family=args.kernel, bandwidth=args.bandwidth)
        x_seq, t_seq, a_seq, y_seq, xt_seq, yt_seq = root.spawn(6)
        X = np.random.default_rng(x_seq).standard_normal((args.n, args.d))
        teacher = np.random.default_rng(t_seq).standard_normal((args.p_star, args.d))
        alpha_star = np.random.default_rng(a_seq).standard_normal(
            (args.p_star, 1)
        ) / np.sqrt(args.p_star)
        st = StudentTeacherSpec(alpha_star=alpha_star, noise_sigma=args.sigma, seed=args.seed)
        y = student_teacher_sample(spec, X, teacher, st, rng=np.random.default_rng(y_seq))
        train_set = Dataset(features=X, targets=y)
        test_set = None
        if args.n_test:
            Xt = np.random.default_rng(xt_seq).standard_normal((args.n_test, args.d))
            yt = student_teacher_sample(spec, Xt, teacher, st,
                                        rng=np.random.default_rng(yt_seq))
            test_set = Dataset(features=Xt, targets=yt)
        sidecar.update({
            "sigma": args.sigma,
            "p_star": args.p_star,
            "kernel": args.kernel,
            "bandwidth": args.bandwidth,
            "alpha_star": alpha_star,
            "teacher_centers": teacher,
            "label_columns": 1,
        })

    save_csv(train_set, args.out + ".csv")
    if test_set is not None:
        save_csv(test_set, args.out + "_test.csv")
        sidecar["n_test"] = args.n_test
    _write_json(sidecar, args.out + ".json")
    return 0


# ---------------------------------------------------------------------------
# train


def _validate_train_flags(args) -> None:
    if args.variant == "gd":
        for flag, name in ((args.s, "--s"), (args.proj, "--proj"), (args.m, "--m")):
            if flag is not None:
                raise _UsageError(f"{name} does not apply to --variant gd")
        if args.q:
            raise _UsageError("--q does not apply to --variant gd")
    if args.variant == "ep3-exact":
        for flag, name in ((args.s, "--s"), (args.proj, "--proj"), (args.m, "--m")):
            if flag is not None:
                raise _UsageError(f"{name} does not apply to --variant ep3-exact")
    if args.variant != "gd" and args.ridge:
        raise _UsageError("--ridge applies only to --variant gd")


def cmd_train(args) -> int:
    from .data_io import load_csv
    from .kernels import KernelSpec
    from .model import save_model
    from .trainer import TrainConfig, train

    _validate_train_flags(args)
    spec = KernelSpec(family=args.kernel, bandwidth=args.bandwidth)
    dataset = load_csv(args.data, label_columns=args.label_cols, header=args.header)
    test = None
    if args.test:
        test = load_csv(args.test, label_columns=args.label_cols, header=args.header)
    Z = _resolve_centers(args.centers, dataset.features, args.seed)

    projection = _parse_projection(args.proj or "ep2:1", args.ep2_lr_rule)
    config = TrainConfig(
        q_data=args.q,
        s=args.s,
        m=args.m,
        eta=args.eta,
        epochs=args.epochs,
        projection=projection,
        seed=args.seed,
        tol=args.tol,
        ridge=args.ridge,
    )
    model, history = train(spec, dataset, Z, config, variant=args.variant, test=test)
    save_model(model, args.model_out)

    record = {
        "config": {
            "variant": args.variant, "kernel": args.kernel, "bandwidth": args.bandwidth,
            "q": args.q, "s": args.s, "m": args.m, "eta": args.eta,
            "epochs": args.epochs, "proj": args.proj or "ep2:1", "seed": args.seed,
            "tol": args.tol, "ridge": args.ridge, "data": args.data,
            "test": args.test, "centers": f"{args.centers[0]}:{args.centers[1]}",
        },
        "epochs_run": len(history),
        "history": history,
        "model_path": args.model_out,
    }
    _write_json(record, args.record_out)
    return 0


# ---------------------------------------------------------------------------
# fixed-point


def cmd_fixed_point(args) -> int:
    import numpy as np

    from .analysis import StudentTeacherSpec, fixed_point, montecarlo_estimator_stats
    from .data_io import load_csv
    from .kernels import KernelSpec

    spec = KernelSpec(family=args.kernel, bandwidth=args.bandwidth)
    dataset = load_csv(args.data, label_columns=args.label_cols, header=args.header)

    teacher = None
    if args.teacher:
        with open(args.teacher, encoding="utf-8") as fh:
            teacher = json.load(fh)
        if "teacher_centers" not in teacher:
            raise ValueError(f"{args.teacher}: sidecar has no teacher_centers")

    if args.draws:
        if teacher is None:
            raise _UsageError("--draws requires --teacher with a ground-truth sidecar")
        Z = np.asarray(teacher["teacher_centers"], dtype=np.float64)
    else:
        if args.centers is None:
            raise _UsageError("--centers is required unless --teacher supplies them")
        Z = _resolve_centers(args.centers, dataset.features, args.seed)

    report = fixed_point(spec, dataset.features, dataset.targets, Z, args.q)
    payload = {
        "n": dataset.n,
        "p": Z.shape[0],
        "q": args.q,
        "alpha_inf": report.alpha_inf,
        "variance_trace_direct": report.variance_trace_direct,
        "variance_trace_alt": report.variance_trace_alt,
        "lr_bound": report.lr_bound,
        "trace_m_inv": report.trace_m_inv,
    }
    if args.draws:
        st = StudentTeacherSpec(
            alpha_star=np.asarray(teacher["alpha_star"], dtype=np.float64),
            noise_sigma=float(teacher["sigma"]),
            seed=args.seed,
        )
        stats = montecarlo_estimator_stats(spec, dataset.features, Z, args.q, st, args.draws)
        payload["montecarlo"] = {
            "draws": args.draws,
            "mean_alpha": stats["mean_alpha"],
            "alpha_stderr": stats["alpha_stderr"],
            "mean_sqerr_over_sigma2": stats["mean_sqerr_over_sigma2"],
            "normalized": stats["normalized"],
        }
    _write_json(payload, args.out)
    return 0


# ---------------------------------------------------------------------------
# benchmark


def cmd_benchmark(args) -> int:
    import numpy as np

    from .analysis import FixedPointOperator, StudentTeacherSpec, student_teacher_sample
    from .kernels import KernelSpec, kernel_matrix

    spec = KernelSpec(family=args.kernel, bandwidth=args.bandwidth)
    p_grid = [int(v) for v in args.p_grid.split(",")]
    n_grid = [int(v) for v in args.n_grid.split(",")]
    n_max = max(n_grid)

    root = np.random.SeedSequence(args.seed)
    x_seq, t_seq, a_seq, y_seq, xt_seq = root.spawn(5)
    X_all = np.random.default_rng(x_seq).standard_normal((n_max, args.d))
    teacher = np.random.default_rng(t_seq).standard_normal((args.p_star, args.d))
    alpha_star = np.random.default_rng(a_seq).standard_normal(
        (args.p_star, 1)
    ) / np.sqrt(args.p_star)
    st = StudentTeacherSpec(alpha_star=alpha_star, noise_sigma=args.sigma, seed=args.seed)
    y_all = student_teacher_sample(spec, X_all, teacher, st,
                                   rng=np.random.default_rng(y_seq))
    X_test = np.random.default_rng(xt_seq).standard_normal((args.n_test, args.d))
    f_star = kernel_matrix(spec, X_test, teacher) @ alpha_star

    lines = ["p,n,test_error"]
    for p in p_grid:
        for n in n_grid:
            X, y = X_all[:n], y_all[:n]
            ids = np.sort(np.random.default_rng(root.spawn(1)[0]).choice(n, p, replace=False))
            op = FixedPointOperator(spec, X, X[ids], args.q)
            alpha = op.alpha_inf(y)
            f_hat = kernel_matrix(spec, X_test, X[ids]) @ alpha
            err = float(np.mean((f_hat - f_star) ** 2))
            lines.append(f"{p},{n},{err!r}")

    text = "\n".join(lines)
    if args.out is None or args.out == "-":
        print(text)
    else:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="kernelforge", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write synthetic datasets plus a ground-truth sidecar")
    p.add_argument("--kind", choices=("blobs", "student-teacher"), required=True)
    p.add_argument("--out", required=True, help="output path prefix")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--n-test", type=int, default=0)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--spread", type=float, default=1.0)
    p.add_argument("--p-star", type=int, default=100)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--kernel", choices=("laplace", "gaussian"), default="laplace")
    p.add_argument("--bandwidth", type=float, default=1.0)
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a general kernel model")
    p.add_argument("--data", required=True)
    p.add_argument("--label-cols", type=int, default=1)
    p.add_argument("--header", action="store_true")
    p.add_argument("--variant", choices=("ep3", "ep3-exact", "gd"), default="ep3")
    p.add_argument("--kernel", choices=("laplace", "gaussian"), required=True)
    p.add_argument("--bandwidth", type=float, required=True)
    p.add_argument("--centers", type=_parse_centers, required=True,
                   help="file:PATH, random:P or kmeans:P")
    p.add_argument("--q", type=int, default=0)
    p.add_argument("--s", type=int, default=None)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--eta", type=_parse_eta, default="auto")
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--proj", default=None, help="ep2:T, exact, or richardson:NU,T")
    p.add_argument("--ep2-lr-rule", choices=("paper", "corrected"), default="paper")
    p.add_argument("--test", default=None)
    p.add_argument("--tol", type=float, default=0.0)
    p.add_argument("--ridge", type=float, default=0.0)
    p.add_argument("--model-out", required=True)
    p.add_argument("--record-out", default=None, help="run record JSON (default stdout)")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("fixed-point", help="closed-form limit and variance report")
    p.add_argument("--data", required=True)
    p.add_argument("--label-cols", type=int, default=1)
    p.add_argument("--header", action="store_true")
    p.add_argument("--kernel", choices=("laplace", "gaussian"), required=True)
    p.add_argument("--bandwidth", type=float, required=True)
    p.add_argument("--centers", type=_parse_centers, default=None)
    p.add_argument("--q", type=int, default=0)
    p.add_argument("--draws", type=int, default=0)
    p.add_argument("--teacher", default=None, help="sidecar JSON from synth")
    p.add_argument("--out", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_fixed_point)

    p = sub.add_parser("benchmark", help="sweep model and data sizes into a CSV")
    p.add_argument("--p-grid", required=True, help="comma-separated center counts")
    p.add_argument("--n-grid", required=True, help="comma-separated sample counts")
    p.add_argument("--d", type=int, default=5)
    p.add_argument("--p-star", type=int, default=200)
    p.add_argument("--sigma", type=float, default=0.25)
    p.add_argument("--n-test", type=int, default=1000)
    p.add_argument("--q", type=int, default=0)
    p.add_argument("--kernel", choices=("laplace", "gaussian"), default="laplace")
    p.add_argument("--bandwidth", type=float, default=4.0)
    p.add_argument("--out", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_benchmark)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    _configure_threads(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)

    from .trainer import DivergenceError

    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
