"""Command-line front end: ``kbz {solve,bench,recover,inspect}``."""

from __future__ import annotations

import argparse
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import experiments as ex
from .linalg import DenseMatrix, compute_spectral_bounds, load_matrix, partition_uniform
from .solvers import VARIANTS, SolverConfig, constant_alpha_defaults, relative_error, run

EXIT_OK, EXIT_USAGE, EXIT_MAXITER = 0, 1, 2
DEFAULT_OUT = "kbz_out"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; 2 means "not converged" here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(name):
    def parse(text):
        try:
            v = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be an integer >= 1, got {text!r}")
        if v < 1:
            raise argparse.ArgumentTypeError(f"{name} must be an integer >= 1, got {v}")
        return v

    return parse


def _nonneg_float(name):
    def parse(text):
        try:
            v = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be a number, got {text!r}")
        if not v >= 0:
            raise argparse.ArgumentTypeError(f"{name} must be >= 0, got {v}")
        return v

    return parse


def _pos_float(name):
    def parse(text):
        v = _nonneg_float(name)(text)
        if v == 0:
            raise argparse.ArgumentTypeError(f"{name} must be > 0")
        return v

    return parse


def _method(text):
    if text not in VARIANTS:
        raise argparse.ArgumentTypeError(f"unknown method {text!r}; valid: {', '.join(VARIANTS)}")
    return text


def _methods(text):
    return tuple(_method(t.strip()) for t in text.split(",") if t.strip())


def _seeds(text):
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if "-" in part[1:]:
                lo, hi = part.split("-", 1)
                out.extend(range(int(lo), int(hi) + 1))
            else:
                out.append(int(part))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad seed list {text!r}; use e.g. 0-9 or 1,2,3")
    if not out:
        raise argparse.ArgumentTypeError("empty seed list")
    return tuple(out)


def _add_problem_flags(p, *, kind_default="sparse"):
    p.add_argument("--gen", choices=("gaussian", "structured", "file"), default="gaussian")
    p.add_argument("--m", type=_positive_int("--m"), default=200)
    p.add_argument("--n", type=_positive_int("--n"), default=100)
    p.add_argument("--rank", type=_positive_int("--rank"))
    p.add_argument("--kappa", type=_pos_float("--kappa"), default=10.0)
    p.add_argument("--kind", choices=("sparse", "minnorm"), default=kind_default)
    p.add_argument("--lambda", dest="lam", type=_nonneg_float("--lambda"), default=5.0)
    p.add_argument("--q", type=_nonneg_float("--q"), default=5.0)
    p.add_argument("--matrix", type=Path, help="matrix file for --gen file")
    p.add_argument("--rhs", type=Path, help="right-hand side file (one value per line)")
    p.add_argument("--x-ref", type=Path, help="reference solution file for error tracking")


def _add_solver_flags(p):
    p.add_argument("--tau", type=_positive_int("--tau"), default=20)
    p.add_argument("--delta-z", type=_pos_float("--delta-z"), default=1.0)
    p.add_argument("--delta-x", type=_pos_float("--delta-x"), default=1.0)
    p.add_argument("--tol", type=_pos_float("--tol"), default=1e-5)
    p.add_argument("--max-iters", type=_positive_int("--max-iters"), default=5_000_000)
    p.add_argument("--trace-stride", type=_positive_int("--trace-stride"), default=10)
    p.add_argument("--out", type=Path, default=None, help="output directory (default $KBZ_OUT or ./kbz_out)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kbz", description="Randomized block extended Bregman-Kaczmarz solvers.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="solve one problem and write its convergence trace")
    _add_problem_flags(p)
    _add_solver_flags(p)
    p.add_argument("--method", type=_method, required=True, help=f"one of {', '.join(VARIANTS)}")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("bench", help="run a benchmark suite and write a report CSV")
    p.add_argument("--config", type=Path, help="key=value suite file; flags given explicitly win")
    _add_problem_flags(p)
    _add_solver_flags(p)
    p.add_argument("--methods", type=_methods, default=None)
    p.add_argument("--seeds", type=_seeds, default=tuple(range(10)))
    p.add_argument("--jobs", type=_positive_int("--jobs"), default=1)

    p = sub.add_parser("recover", help="image recovery demo with PGM output")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--mnist", type=Path, help="IDX3-ubyte image file")
    src.add_argument("--synthetic", action="store_true", help="use a built-in 8x8 test image")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--kind", choices=("sparse", "minnorm"), default="sparse")
    p.add_argument("--m", type=_positive_int("--m"))
    p.add_argument("--q", type=_nonneg_float("--q"), default=5.0)
    p.add_argument("--lambda", dest="lam", type=_nonneg_float("--lambda"), default=5.0)
    p.add_argument("--iterations", type=_positive_int("--iterations"))
    p.add_argument("--methods", type=_methods, default=None)
    p.add_argument("--tau", type=_positive_int("--tau"), default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=None)

    p = sub.add_parser("inspect", help="print matrix norms, block ratios and default relaxations")
    _add_problem_flags(p)
    p.add_argument("--tau", type=_positive_int("--tau"), default=20)
    p.add_argument("--seed", type=int, default=0)
    return parser


# ---------------------------------------------------------------------------


def _out_dir(arg) -> Path:
    out = arg if arg is not None else Path(os.environ.get("KBZ_OUT", DEFAULT_OUT))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _instance_spec(args) -> ex.InstanceSpec:
    if args.gen == "structured":
        rank = args.rank or min(args.m, args.n)
        if rank > min(args.m, args.n):
            raise UsageError(f"--rank must lie in [1, {min(args.m, args.n)}], got {rank}")
        if args.kappa <= 1:
            raise UsageError(f"--kappa must exceed 1, got {args.kappa}")
    else:
        rank = None
    return ex.InstanceSpec(
        generator=args.gen, m=args.m, n=args.n, kind=args.kind, lam=args.lam, q=args.q,
        rank=rank, kappa=args.kappa,
    )


def _load_vector(path: Path, length: int, what: str) -> np.ndarray:
    try:
        v = np.loadtxt(path, dtype=np.float64, ndmin=1)
    except (OSError, ValueError) as err:
        raise UsageError(f"cannot read {what} {path}: {err}")
    if v.shape != (length,):
        raise UsageError(f"{what} {path} has {v.size} entries, expected {length}")
    return v


def _problem(args, seed: int) -> ex.ProblemInstance:
    if args.gen != "file":
        return _instance_spec(args).build(seed)
    if args.matrix is None or args.rhs is None:
        raise UsageError("--gen file needs --matrix and --rhs")
    try:
        A = load_matrix(args.matrix)
    except (OSError, ValueError) as err:
        raise UsageError(f"cannot read matrix {args.matrix}: {err}")
    b = _load_vector(args.rhs, A.rows, "right-hand side")
    if args.x_ref is not None:
        x_hat = _load_vector(args.x_ref, A.cols, "reference solution")
    elif args.kind == "minnorm":
        x_hat = ex.pseudo_inverse_solution(A, b)
    else:
        x_hat = None
    return ex.ProblemInstance(
        matrix=A, b=b, x_hat=x_hat, y_hat=None, noise=None, noise_q=float("nan"),
        kind=args.kind, lam=args.lam if args.kind == "sparse" else 0.0, seed=seed,
        name=args.matrix.stem,
    )


def _check_method_kind(methods, kind):
    if kind == "sparse" and "reabk" in methods:
        raise UsageError("reabk only solves minimum-norm problems (--kind minnorm)")


def cmd_solve(args) -> int:
    _check_method_kind((args.method,), args.kind)
    if args.method == "arabebk" and not (args.delta_z < 2 and args.delta_x < 2):
        raise UsageError("--delta-z and --delta-x must lie in (0, 2)")
    out = _out_dir(args.out)
    problem = _problem(args, args.seed)
    cfg = SolverConfig(
        variant=args.method,
        f_spec=problem.f_spec,
        tau=args.tau,
        delta_z=args.delta_z,
        delta_x=args.delta_x,
        max_iters=args.max_iters,
        tol=args.tol if problem.x_hat is not None else None,
        trace_stride=args.trace_stride,
        seed=args.seed,
    )
    res = run(cfg, problem)
    trace_path = out / f"trace_{args.method}_seed{args.seed}.csv"
    res.trace.to_csv(trace_path)
    err = relative_error(res.state.x_primal, problem.x_hat) if problem.x_hat is not None else float("nan")
    print(
        f"method={args.method} iters={res.iterations} rel_err={err:.3e} "
        f"seconds={res.setup_seconds + res.solve_seconds:.4f} stop={res.stop_reason}"
    )
    return EXIT_OK if res.stop_reason == "converged" else EXIT_MAXITER


_CONFIG_KEYS = {
    "gen": "gen", "m": "m", "n": "n", "rank": "rank", "kappa": "kappa", "kind": "kind",
    "lambda": "lam", "q": "q", "methods": "methods", "seeds": "seeds", "tau": "tau",
    "delta_z": "delta_z", "delta_x": "delta_x", "tol": "tol", "max_iters": "max_iters",
    "trace_stride": "trace_stride", "jobs": "jobs",
}


def read_suite_file(path: Path) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    entries = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, value = (t.strip() for t in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in _CONFIG_KEYS:
                raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
            entries[key] = value
    return entries


def _apply_suite_file(args, parser_argv) -> None:
    """Fill args from the config file unless the flag was given on the command line."""
    parser = build_parser()
    sub = parser._subparsers._group_actions[0].choices["bench"]
    explicit = {
        a.dest
        for a in sub._actions
        for opt in a.option_strings
        if any(tok == opt or tok.startswith(opt + "=") for tok in parser_argv)
    }
    for key, value in read_suite_file(args.config).items():
        dest = _CONFIG_KEYS[key]
        if dest in explicit:
            continue
        action = next(a for a in sub._actions if a.dest == dest)
        try:
            parsed = action.type(value) if action.type else value
        except argparse.ArgumentTypeError as err:
            raise UsageError(f"{args.config}: {err}")
        if action.choices and parsed not in action.choices:
            raise UsageError(f"{args.config}: {key} must be one of {', '.join(action.choices)}")
        setattr(args, dest, parsed)


def cmd_bench(args, argv=()) -> int:
    if args.config is not None:
        _apply_suite_file(args, argv)
    if args.gen == "file":
        raise UsageError("bench needs a generator (--gen gaussian|structured)")
    methods = args.methods or (("reabk", "arabebk") if args.kind == "minnorm" else ("rebk", "crabebk", "arabebk"))
    _check_method_kind(methods, args.kind)
    spec = _instance_spec(args)
    suite = ex.SuiteConfig(
        instances=(spec,),
        methods=methods,
        seeds=args.seeds,
        tau=args.tau,
        tol=args.tol,
        max_iters=args.max_iters,
        trace_stride=args.trace_stride,
        jobs=args.jobs,
    )
    out = _out_dir(args.out)
    report, runs = ex.run_benchmark(suite)
    report.to_csv(out / "report.csv")
    tdir = out / "traces"
    tdir.mkdir(exist_ok=True)
    for (meth, inst, seed), res in runs.items():
        res.trace.to_csv(tdir / f"{inst}_{meth}_seed{seed}.csv")
    print(report.format_table())
    return EXIT_OK if all(r.converged for r in report.rows) else EXIT_MAXITER


def cmd_recover(args) -> int:
    if args.synthetic:
        image, shape = ex.synthetic_image(8), (8, 8)
    else:
        try:
            image = ex.load_mnist_image(args.mnist, args.index)
        except OSError as err:
            raise UsageError(f"cannot read {args.mnist}: {err}")
        except ex.IdxFormatError as err:
            raise UsageError(str(err))
        except IndexError as err:
            raise UsageError(str(err))
        side = int(round(np.sqrt(image.size)))
        shape = (side, image.size // side)
    if not np.any(image):
        raise UsageError("image is blank; PSNR is undefined")
    pixels = image.size
    if args.kind == "sparse":
        m = args.m or (48 if args.synthetic else 500)
        iterations = args.iterations or 10_000
        methods = args.methods or ("rebk", "crabebk", "arabebk")
    else:
        m = args.m or (128 if args.synthetic else 2000)
        iterations = args.iterations or 1000
        methods = args.methods or ("reabk", "arabebk")
    _check_method_kind(methods, args.kind)
    out = _out_dir(args.out)
    results = ex.recover_image(
        image, m, args.kind, methods, iterations, args.seed, q=args.q, lam=args.lam, tau=args.tau
    )
    ex.write_pgm(out / "original.pgm", image, shape)
    for meth, (x, val) in results.items():
        ex.write_pgm(out / f"{meth}.pgm", x, shape)
        print(f"{meth:<10} psnr={val:.2f} dB")
    return EXIT_OK


def cmd_inspect(args) -> int:
    if args.gen == "file":
        if args.matrix is None:
            raise UsageError("--gen file needs --matrix")
        A = load_matrix(args.matrix)
    else:
        A = _instance_spec(args).build(args.seed).matrix
    tau_r, tau_c = min(args.tau, A.rows), min(args.tau, A.cols)
    rows = partition_uniform(A, tau_r, "rows")
    cols = partition_uniform(A, tau_c, "columns")
    bounds = compute_spectral_bounds(A, rows, cols)
    az, ax = constant_alpha_defaults(bounds, None, None)
    print(f"shape            {A.rows} x {A.cols}")
    print(f"frobenius^2      {A.frob_sq:.6g}")
    print(f"row blocks       {rows.size} (tau={tau_r})")
    print(f"column blocks    {cols.size} (tau={tau_c})")
    print(f"beta_max rows    {bounds.beta_max_rows:.6g}")
    print(f"beta_max cols    {bounds.beta_max_cols:.6g}")
    print(f"beta_min rows    {bounds.beta_min_rows:.6g}")
    print(f"crabebk alpha    {az:.6g}")
    return EXIT_OK


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"solve": cmd_solve, "recover": cmd_recover, "inspect": cmd_inspect}
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            if args.command == "bench":
                return cmd_bench(args, argv)
            return handlers[args.command](args)
    except UsageError as err:
        print(f"kbz {args.command}: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as err:
        print(f"kbz {args.command}: error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
