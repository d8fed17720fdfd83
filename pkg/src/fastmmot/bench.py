"""Benchmark harness: time solvers over a size ladder and fit log-log slopes."""

from __future__ import annotations

import csv
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _backend, oracle
from .core import (
    Grid1D,
    InvalidParam,
    Marginal2D,
    ScalingState,
    SinkhornConfig,
    SizeOverflow,
)
from .ftvp2d import fast_sinkhorn_2d
from .multimarginal import fast_sinkhorn_lm
from .signals import image_to_marginal, random_instance, random_instance_2d, ricker_instance, synthetic_image
from .solver import fast_sinkhorn_3m

FAMILIES = ("random1d", "ricker", "random2d", "images", "lmarginal")
SOLVERS = ("fast", "dense", "both")
CSV_HEADER = ["size", "solver", "mean_time_s", "distance", "residual", "plan_diff_fro"]
TRACE_HEADER = ["size", "solver", "iteration", "time_s", "residual"]
# keys whose values depend on the clock; masked when comparing reports
TIMING_KEYS = frozenset({"time_s", "times_s", "elapsed_s", "slopes"})


@dataclass(frozen=True)
class BenchmarkSpec:
    family: str = "random1d"
    sizes: tuple = (64, 128, 256)
    repeats: int = 5
    epsilon: float = 0.1
    iterations: int = 100
    solver: str = "fast"
    seed: int = 0
    order: int = 4
    stabilize: bool = False
    budget: int = oracle.ELEMENT_BUDGET

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidParam(f"family must be one of {FAMILIES}")
        if self.solver not in SOLVERS:
            raise InvalidParam(f"solver must be one of {SOLVERS}")
        sizes = tuple(int(s) for s in self.sizes)
        if not sizes or any(s < 1 for s in sizes) or list(sizes) != sorted(set(sizes)):
            raise InvalidParam("sizes must be positive and strictly ascending")
        object.__setattr__(self, "sizes", sizes)
        if self.repeats < 1:
            raise InvalidParam("repeats must be at least 1")
        if self.iterations < 1:
            raise InvalidParam("iterations must be at least 1")

    def config(self) -> SinkhornConfig:
        # the tolerance is set below reach so every run does the full iteration count
        return SinkhornConfig(epsilon=self.epsilon, tol=1e-300, itr_max=self.iterations,
                              stabilize=self.stabilize)


def fit_slope(sizes, times) -> float:
    """Least-squares slope of log(time) against log(size)."""
    x = np.log(np.asarray(sizes, dtype=np.float64))
    y = np.log(np.asarray(times, dtype=np.float64))
    return float(np.polyfit(x, y, 1)[0])


@dataclass
class Instance:
    kind: str  # "1d", "2d" or "lm"
    marginals: list
    grid: Grid1D = None
    shape: tuple = None
    extra: dict = field(default_factory=dict)

    def dense_entries(self) -> int:
        if self.kind == "2d":
            return (self.shape[0] * self.shape[1]) ** 3
        return self.grid.n ** len(self.marginals)


def make_instance(spec: BenchmarkSpec, size: int) -> Instance:
    seed = spec.seed + size
    if spec.family == "random1d":
        return Instance("1d", random_instance(size, 3, seed), Grid1D.on_interval(size))
    if spec.family == "ricker":
        margs, grid = ricker_instance(size)
        return Instance("1d", margs, grid)
    if spec.family == "lmarginal":
        return Instance("lm", random_instance(size, spec.order, seed), Grid1D.on_interval(size))
    if spec.family == "random2d":
        return Instance("2d", random_instance_2d(size, size, 3, seed), shape=(size, size))
    imgs = [synthetic_image(size, size, seed + 7919 * j) for j in range(3)]
    return Instance("2d", [image_to_marginal(im, 1e-3) for im in imgs], shape=(size, size))


def run_solver(inst: Instance, solver: str, config: SinkhornConfig, budget=oracle.ELEMENT_BUDGET):
    if solver == "fast":
        if inst.kind == "1d":
            return fast_sinkhorn_3m(*inst.marginals, inst.grid, config)
        if inst.kind == "2d":
            return fast_sinkhorn_2d(*inst.marginals, config)
        return fast_sinkhorn_lm(inst.marginals, inst.grid, config)
    if inst.kind == "2d":
        return oracle.dense_sinkhorn_2d(*inst.marginals, config, budget)
    return oracle.dense_sinkhorn_lm(inst.marginals, inst.grid, config, budget)


def _flat_state(state: ScalingState) -> ScalingState:
    return ScalingState(
        tuple(s.ravel(order="F") for s in state.scalings),
        tuple(p.ravel(order="F") for p in state.potentials),
        epsilon=state.epsilon,
    )


def dense_kernel_for(inst: Instance, epsilon: float, budget=oracle.ELEMENT_BUDGET):
    if inst.kind == "2d":
        m = inst.marginals[0]
        return oracle.dense_kernel_2d(inst.shape, m.h1, m.h2, epsilon, budget)
    l = len(inst.marginals)
    return np.exp(-oracle.dense_cost(inst.grid, l, budget).values / epsilon)


def plan_difference(inst: Instance, state_a: ScalingState, state_b: ScalingState, epsilon: float,
                    budget=oracle.ELEMENT_BUDGET) -> float:
    """Frobenius norm of the difference of the two materialized plans."""
    K = dense_kernel_for(inst, epsilon, budget)
    pa = oracle.dense_plan(_flat_state(state_a), K).values
    pb = oracle.dense_plan(_flat_state(state_b), K).values
    return float(np.linalg.norm(pa - pb))


def _timed(inst, solver, config, repeats, budget):
    run_solver(inst, solver, config, budget)  # warm-up, not recorded
    times = []
    result = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = run_solver(inst, solver, config, budget)
        times.append(time.perf_counter() - t0)
    return result, times


def _bench_size(spec: BenchmarkSpec, size: int, backend: str = None):
    """Records and traces for one size; ``backend`` pins the kernels in worker processes."""
    if backend is not None:
        _backend.set_backend(backend)
    config = spec.config()
    solvers = ["fast", "dense"] if spec.solver == "both" else [spec.solver]
    inst = make_instance(spec, size)
    records, traces, states = [], [], {}
    for solver in solvers:
        rec = {"size": size, "solver": solver}
        if solver == "dense" and inst.dense_entries() > spec.budget:
            rec.update(skipped="SizeOverflow", distance=None, residual=None, iterations=None)
            records.append(rec)
            continue
        (state, report), times = _timed(inst, solver, config, spec.repeats, spec.budget)
        states[solver] = state
        median = statistics.median(times)
        rec.update(
            time_s=median,
            times_s=times,
            distance=report.distance,
            residual=report.residuals[-1] if report.residuals else None,
            iterations=report.iterations,
        )
        records.append(rec)
        its = report.iterations
        traces.append({
            "size": size,
            "solver": solver,
            "residual": list(report.residuals),
            "time_s": [median * (t + 1) / its for t in range(its)],
        })
    if len(states) == 2:
        diff = plan_difference(inst, states["fast"], states["dense"], spec.epsilon, spec.budget)
        for rec in records:
            rec["plan_diff_fro"] = diff
    return records, traces


def run_benchmark(spec: BenchmarkSpec, parallel_instances: int = 1) -> dict:
    """Time every size of ``spec``.

    With ``parallel_instances > 1`` different sizes run in separate worker
    processes at once; each solve is still single-threaded.
    """
    solvers = ["fast", "dense"] if spec.solver == "both" else [spec.solver]
    if spec.solver == "dense":
        for size in spec.sizes:
            entries = make_instance(spec, size).dense_entries()
            if entries > spec.budget:
                raise SizeOverflow(f"dense solver at size {size} needs {entries} tensor entries, "
                                   f"budget is {spec.budget}")
    if parallel_instances < 1:
        raise InvalidParam("parallel_instances must be at least 1")
    if parallel_instances == 1:
        parts = [_bench_size(spec, size) for size in spec.sizes]
    else:
        with ProcessPoolExecutor(max_workers=parallel_instances) as pool:
            futures = [pool.submit(_bench_size, spec, size, _backend.name()) for size in spec.sizes]
            parts = [f.result() for f in futures]
    records = [r for recs, _ in parts for r in recs]
    traces = [t for _, trs in parts for t in trs]
    slopes = {}
    for solver in solvers:
        pts = [(r["size"], r["time_s"]) for r in records if r["solver"] == solver and "time_s" in r]
        if len(pts) >= 3:
            slopes[solver] = fit_slope(*zip(*pts))
    spec_dict = asdict(spec)
    spec_dict["sizes"] = list(spec.sizes)
    return {
        "schema": 1,
        "kind": "benchmark",
        "backend": _backend.name(),
        "spec": spec_dict,
        "records": records,
        "slopes": slopes,
        "traces": traces,
    }


def mask_timing(obj):
    """Copy of a report with every clock-dependent value removed."""
    if isinstance(obj, dict):
        return {k: mask_timing(v) for k, v in obj.items() if k not in TIMING_KEYS}
    if isinstance(obj, list):
        return [mask_timing(v) for v in obj]
    return obj


def _cell(x):
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return ""
    return repr(x) if isinstance(x, float) else str(x)


def write_csv(path, report: dict):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(CSV_HEADER)
        for r in report["records"]:
            out.writerow([r["size"], r["solver"], _cell(r.get("time_s")), _cell(r.get("distance")),
                          _cell(r.get("residual")), _cell(r.get("plan_diff_fro"))])


def write_trace_csv(path, report: dict):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(TRACE_HEADER)
        for tr in report["traces"]:
            for it, (t, res) in enumerate(zip(tr["time_s"], tr["residual"]), 1):
                out.writerow([tr["size"], tr["solver"], it, _cell(t), _cell(res)])
