"""Command-line interface: ``fastmmot solve | bench | match | gen``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import _backend, bench, oracle
from .core import (
    Grid1D,
    MMOTError,
    NumericalOverflow,
    ShapeMismatch,
    SinkhornConfig,
    validate_marginal,
)
from .formats import dumps_report, parse_csv_vector, parse_pgm, write_csv_vector, write_pgm, write_report
from .ftvp2d import fast_sinkhorn_2d
from .multimarginal import fast_sinkhorn_lm
from .signals import (
    image_to_marginal,
    random_instance,
    random_instance_2d,
    ricker_instance,
    synthetic_image,
)
from .solver import fast_sinkhorn_3m

EXIT_ERROR = 1


def _solver_flags(p, default="fast"):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--fast", dest="solver", action="store_const", const="fast")
    g.add_argument("--dense", dest="solver", action="store_const", const="dense")
    g.add_argument("--both", dest="solver", action="store_const", const="both")
    p.set_defaults(solver=default)


def _config_flags(p, iterations=100):
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--max-iter", type=int, default=iterations)
    p.add_argument("--tau", type=float, default=1e30)
    p.add_argument("--residual-mode", choices=("skip_last", "full"), default="skip_last")
    p.add_argument("--output", type=Path, help="write the JSON report here")


def _config(args, stabilize) -> SinkhornConfig:
    return SinkhornConfig(epsilon=args.epsilon, tol=args.tol, itr_max=args.max_iter,
                          stabilize=stabilize, tau=args.tau, residual_mode=args.residual_mode)


def _emit(args, report: dict):
    text = dumps_report(report)
    if args.output is not None:
        Path(args.output).write_text(text)
    return text


def _overflow_payload(exc: NumericalOverflow) -> dict:
    out = {"error": exc.category, "message": str(exc), "iteration": exc.iteration}
    rep = getattr(exc, "report", None)
    if rep is not None and hasattr(rep, "to_dict"):
        out["residuals"] = rep.residuals
        out["solver"] = rep.solver
    return out


# ---------------------------------------------------------------- solve

def cmd_solve(args) -> int:
    raw = [parse_csv_vector(p) for p in args.marginals]
    if len(raw) < 3:
        raise ShapeMismatch("solve needs at least three marginal files")
    margs = [validate_marginal(r) for r in raw]
    sizes = {m.n for m in margs}
    n = margs[0].n
    if len(sizes) != 1 and args.solver != "dense":
        raise ShapeMismatch(f"marginal lengths differ: {sorted(sizes)}; use --dense")
    grid = Grid1D.on_interval(n, *args.interval)
    config = _config(args, args.stabilize)
    runs = {}
    fast = fast_sinkhorn_3m if len(margs) == 3 else None
    for solver in (["fast", "dense"] if args.solver == "both" else [args.solver]):
        if solver == "fast":
            if fast is not None:
                runs[solver] = fast(*margs, grid, config)
            else:
                runs[solver] = fast_sinkhorn_lm(margs, grid, config)
        else:
            runs[solver] = oracle.dense_sinkhorn_lm(margs, grid, config)
    report = {
        "kind": "solve",
        "backend": _backend.name(),
        "marginals": [str(p) for p in args.marginals],
        "grid": {"n": grid.n, "h": grid.h, "interval": list(args.interval)},
        "runs": {k: rep.to_dict() for k, (_, rep) in runs.items()},
    }
    if len(runs) == 2:
        inst = bench.Instance("lm", margs, grid)
        report["plan_diff_fro"] = bench.plan_difference(
            inst, runs["fast"][0], runs["dense"][0], config.epsilon)
    _emit(args, report)
    for k, (_, rep) in runs.items():
        print(f"{k}: distance {rep.distance!r} after {rep.iterations} iterations, "
              f"residual {rep.residuals[-1]!r}")
    return 0


# ---------------------------------------------------------------- bench

def cmd_bench(args) -> int:
    spec = bench.BenchmarkSpec(
        family=args.family, sizes=tuple(args.sizes), repeats=args.repeats, epsilon=args.epsilon,
        iterations=args.max_iter, solver=args.solver, seed=args.seed, order=args.order,
        stabilize=args.stabilize,
    )
    report = bench.run_benchmark(spec, args.parallel_instances)
    _emit(args, report)
    if args.csv is not None:
        bench.write_csv(args.csv, report)
    if args.trace_csv is not None:
        bench.write_trace_csv(args.trace_csv, report)
    for r in report["records"]:
        if "time_s" in r:
            print(f"{r['solver']:>5} size {r['size']:>6}: {r['time_s']:.6f} s, distance {r['distance']!r}")
        else:
            print(f"{r['solver']:>5} size {r['size']:>6}: skipped ({r['skipped']})")
    for solver, slope in report["slopes"].items():
        print(f"{solver} log-log slope: {slope:.3f}")
    return 0


# ---------------------------------------------------------------- match

def cmd_match(args) -> int:
    imgs = [parse_pgm(p) for p in args.images]
    if len({im.shape for im in imgs}) != 1:
        raise ShapeMismatch(f"image shapes differ: {[im.shape for im in imgs]}")
    margs = [image_to_marginal(im, args.delta) for im in imgs]
    stabilize = args.stabilize if args.stabilize is not None else args.epsilon < 0.01
    config = _config(args, stabilize)
    state, rep = fast_sinkhorn_2d(*margs, config)
    report = {
        "kind": "match",
        "backend": _backend.name(),
        "images": [str(p) for p in args.images],
        "shape": list(imgs[0].shape),
        "delta": args.delta,
        "run": rep.to_dict(),
    }
    _emit(args, report)
    print(f"distance {rep.distance!r} after {rep.iterations} iterations, residual {rep.residuals[-1]!r}")
    return 0


# ---------------------------------------------------------------- gen

def cmd_gen(args) -> int:
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if args.family in ("random1d", "lmarginal", "ricker"):
        if args.family == "ricker":
            margs, _ = ricker_instance(args.n)
        else:
            count = 3 if args.family == "random1d" else args.order
            margs = random_instance(args.n, count, args.seed)
        for j, m in enumerate(margs, 1):
            path = out / f"{args.family}_{j}.csv"
            write_csv_vector(path, m.weights)
            written.append(path)
    else:
        m = args.m or args.n
        if args.family == "random2d":
            imgs = [65535.0 * mg.weights / mg.weights.max()
                    for mg in random_instance_2d(args.n, m, 3, args.seed)]
            maxval = 65535
        else:
            imgs = [synthetic_image(args.n, m, args.seed + 7919 * j) for j in range(3)]
            maxval = 255
        for j, im in enumerate(imgs, 1):
            path = out / f"{args.family}_{j}.pgm"
            write_pgm(path, im, maxval=maxval)
            written.append(path)
    for p in written:
        print(p)
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fastmmot", description=__doc__)
    p.add_argument("--backend", choices=("compiled", "python"), help="kernel backend override")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve one instance given as CSV marginals")
    s.add_argument("--marginals", nargs="+", type=Path, required=True)
    s.add_argument("--interval", nargs=2, type=float, default=(0.0, 1.0), metavar=("START", "STOP"))
    s.add_argument("--stabilize", action="store_true")
    _config_flags(s)
    _solver_flags(s)
    s.set_defaults(func=cmd_solve)

    b = sub.add_parser("bench", help="time solvers over a size ladder")
    b.add_argument("--family", choices=bench.FAMILIES, default="random1d")
    b.add_argument("--sizes", nargs="+", type=int, default=[64, 128, 256])
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--order", type=int, default=4, help="marginal count for the lmarginal family")
    b.add_argument("--stabilize", action="store_true")
    b.add_argument("--csv", type=Path, help="per-size table")
    b.add_argument("--trace-csv", type=Path, help="residual against time, one row per iteration")
    b.add_argument("--parallel-instances", type=int, default=1,
                   help="sizes solved concurrently in worker processes")
    _config_flags(b)
    _solver_flags(b)
    b.set_defaults(func=cmd_bench)

    m = sub.add_parser("match", help="distance between three grayscale PGM images")
    m.add_argument("images", nargs=3, type=Path)
    m.add_argument("--delta", type=float, default=0.0, help="mass added to every cell")
    m.add_argument("--stabilize", dest="stabilize", action="store_true", default=None)
    m.add_argument("--no-stabilize", dest="stabilize", action="store_false")
    _config_flags(m)
    m.set_defaults(func=cmd_match)

    g = sub.add_parser("gen", help="write a generated instance to files")
    g.add_argument("family", choices=bench.FAMILIES)
    g.add_argument("--n", type=int, default=32)
    g.add_argument("--m", type=int, default=None, help="second image axis (default n)")
    g.add_argument("--order", type=int, default=4)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--output-dir", type=Path, default=Path("."))
    g.set_defaults(func=cmd_gen)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.backend:
        _backend.set_backend(args.backend)
    try:
        return args.func(args)
    except NumericalOverflow as exc:
        payload = _overflow_payload(exc)
    except MMOTError as exc:
        payload = {"error": exc.category, "message": str(exc)}
    text = json.dumps(payload, sort_keys=True)
    print(text, file=sys.stderr)
    if getattr(args, "output", None) is not None:
        write_report(args.output, {"kind": args.command, **payload})
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
