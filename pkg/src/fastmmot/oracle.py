"""Dense brute-force reference: explicit cost, kernel and plan tensors and a
plain generalized Sinkhorn loop.  Meant for verification at small sizes."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import _backend
from .core import (
    Grid1D,
    KernelParams,
    Marginal1D,
    Marginal2D,
    NumericalOverflow,
    ScalingState,
    ShapeMismatch,
    SinkhornConfig,
    SizeOverflow,
    SolveReport,
    validate_marginal,
)

ELEMENT_BUDGET = 10**8


@dataclass(frozen=True, eq=False)
class DenseTensor:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def order(self) -> int:
        return self.values.ndim

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def entries(self) -> np.ndarray:
        return self.values.reshape(-1)

    def __getitem__(self, idx):
        return self.values[idx]


def _check_budget(shape, budget):
    count = math.prod(shape)
    if count > budget:
        raise SizeOverflow(f"dense tensor of shape {shape} has {count} entries, budget is {budget}")


def _step_exponent(n: int, l: int, budget: int) -> np.ndarray:
    """Integer tensor sum_{p<q} |i_p - i_q| over an n^l grid."""
    _check_budget((n,) * l, budget)
    idx = np.arange(n)
    out = np.zeros((n,) * l, dtype=np.int64)
    for p in range(l):
        for q in range(p + 1, l):
            sp = [1] * l
            sq = [1] * l
            sp[p] = n
            sq[q] = n
            out = out + np.abs(idx.reshape(sp) - idx.reshape(sq))
    return out


def dense_cost(grid: Grid1D, l: int, budget: int = ELEMENT_BUDGET) -> DenseTensor:
    if l < 2:
        raise ShapeMismatch(f"need at least two marginals, got {l}")
    return DenseTensor(grid.h * _step_exponent(grid.n, l, budget))


def dense_kernel(grid: Grid1D, params: KernelParams, l: int, budget: int = ELEMENT_BUDGET) -> DenseTensor:
    cost = dense_cost(grid, l, budget).values
    return DenseTensor(np.exp(-cost / params.epsilon))


def _grid2d_steps(shape):
    n, m = shape
    p = np.arange(n * m)
    # column-major flattening: flat index = i1 + n * i2
    return p % n, p // n


def dense_cost_2d(shape, h1: float, h2: float, budget: int = ELEMENT_BUDGET) -> DenseTensor:
    """Order-3 cost over column-major flattened N x M grids."""
    size = shape[0] * shape[1]
    _check_budget((size,) * 3, budget)
    r, c = _grid2d_steps(shape)
    total = np.zeros((size,) * 3)
    for coord, h in ((r, h1), (c, h2)):
        x, y, z = coord[:, None, None], coord[None, :, None], coord[None, None, :]
        total += h * (np.abs(x - y) + np.abs(x - z) + np.abs(y - z))
    return DenseTensor(total)


def dense_kernel_2d(shape, h1: float, h2: float, epsilon: float, budget: int = ELEMENT_BUDGET) -> DenseTensor:
    return DenseTensor(np.exp(-dense_cost_2d(shape, h1, h2, budget).values / epsilon))


def dense_contract(t, vectors, free_mode: int) -> np.ndarray:
    """Contract every mode except ``free_mode`` (0-based) with the vectors, in mode order."""
    arr = t.values if isinstance(t, DenseTensor) else np.asarray(t, dtype=np.float64)
    l = arr.ndim
    if not 0 <= free_mode < l:
        raise ShapeMismatch(f"free mode {free_mode} out of range for order {l}")
    if len(vectors) != l - 1:
        raise ShapeMismatch(f"order-{l} contraction needs {l - 1} vectors, got {len(vectors)}")
    bound = [m for m in range(l) if m != free_mode]
    out = arr
    # contract from the last bound mode so earlier axis numbers stay valid
    for m, vec in sorted(zip(bound, vectors), key=lambda mv: -mv[0]):
        vec = np.asarray(vec, dtype=np.float64).reshape(-1)
        if vec.size != arr.shape[m]:
            raise ShapeMismatch(f"vector of length {vec.size} does not fit mode {m} of size {arr.shape[m]}")
        out = np.tensordot(out, vec, axes=([m], [0]))
    return out


def dense_plan(state: ScalingState, kernel) -> DenseTensor:
    K = kernel.values if isinstance(kernel, DenseTensor) else np.asarray(kernel)
    if len(state.scalings) != K.ndim or any(x.size != s for x, s in zip(state.scalings, K.shape)):
        raise ShapeMismatch("scaling lengths do not match the kernel shape")
    absorbed = any(np.any(p) for p in state.potentials)
    # with absorbed potentials the factors may overflow on their own, so combine in log space
    factors = state.log_effective() if absorbed else state.scalings
    total = K if not absorbed else np.zeros(K.shape)
    for m, x in enumerate(factors):
        shape = [1] * K.ndim
        shape[m] = x.size
        total = total + x.reshape(shape) if absorbed else total * x.reshape(shape)
    if not absorbed:
        return DenseTensor(total)
    with np.errstate(under="ignore"):
        return DenseTensor(np.exp(total) * K)


def dense_distance(state: ScalingState, cost, kernel) -> float:
    C = cost.values if isinstance(cost, DenseTensor) else np.asarray(cost)
    plan = dense_plan(state, kernel).values
    if C.shape != plan.shape:
        raise ShapeMismatch("cost and kernel shapes differ")
    return float(np.sum(C * plan))


def marginals_of(plan) -> list:
    arr = plan.values if isinstance(plan, DenseTensor) else np.asarray(plan)
    axes = range(arr.ndim)
    return [arr.sum(axis=tuple(a for a in axes if a != m)) for m in axes]


def _safe_divide(u, d):
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        q = u / d
    q[u == 0] = 0.0
    return q


def _general_loop(K, margs, config):
    """Generalized Sinkhorn over an explicit kernel of any order."""
    l = K.ndim
    scal = [np.full(K.shape[m], 1.0 / K.shape[m]) for m in range(l)]
    checked = range(l) if config.residual_mode == "full" else range(l - 1)
    residuals = []
    res = math.inf
    t = 0
    while t < config.itr_max and res > config.tol:
        t += 1
        for m in range(l):
            others = [scal[q] for q in range(l) if q != m]
            scal[m] = _safe_divide(margs[m], dense_contract(K, others, m))
            if not np.all(np.isfinite(scal[m])):
                return scal, residuals, t, True
        res = 0.0
        for m in checked:
            others = [scal[q] for q in range(l) if q != m]
            res += float(np.abs(scal[m] * dense_contract(K, others, m) - margs[m]).sum())
        if not math.isfinite(res):
            return scal, residuals, t, True
        residuals.append(res)
    return scal, residuals, t, False


def _run_dense(K, margs, config, cost, solver_name):
    t0 = time.perf_counter()
    if K.ndim == 3 and config.itr_max > 0:
        u, v, w = (np.ascontiguousarray(m, dtype=np.float64) for m in margs)
        phi = np.full(K.shape[0], 1.0 / K.shape[0])
        psi = np.full(K.shape[1], 1.0 / K.shape[1])
        chi = np.full(K.shape[2], 1.0 / K.shape[2])
        buf = np.zeros(int(config.itr_max))
        iters, status = _backend.kernels.dense_sinkhorn3(
            np.ascontiguousarray(K), u, v, w, config.tol, int(config.itr_max),
            config.residual_mode == "full", phi, psi, chi, buf,
        )
        scal = [phi, psi, chi]
        residuals = buf[: iters if status == 0 else iters - 1].tolist()
        failed = status != 0
        t = iters
    else:
        scal, residuals, t, failed = _general_loop(K, margs, config)
    elapsed = time.perf_counter() - t0
    state = ScalingState(tuple(scal), epsilon=config.epsilon)
    converged = bool(residuals) and residuals[-1] <= config.tol
    report = SolveReport(
        distance=math.nan, iterations=t if not failed else t - 1, residuals=residuals,
        converged=converged, elapsed=elapsed, config=config.as_dict(), solver=solver_name,
    )
    if failed:
        raise NumericalOverflow(f"non-finite scaling in iteration {t}", iteration=t, report=report)
    report.distance = dense_distance(state, cost, K)
    return state, report


def dense_sinkhorn(u, v, w, grid: Grid1D, config: SinkhornConfig = SinkhornConfig(),
                   budget: int = ELEMENT_BUDGET):
    return dense_sinkhorn_lm([u, v, w], grid, config, budget)


def dense_sinkhorn_lm(marginals, grid: Grid1D, config: SinkhornConfig = SinkhornConfig(),
                      budget: int = ELEMENT_BUDGET):
    margs = [validate_marginal(m).weights for m in marginals]
    l = len(margs)
    sizes = {m.size for m in margs}
    if l < 2:
        raise ShapeMismatch("need at least two marginals")
    if sizes != {grid.n}:
        # unequal sizes: build the tensor directly over the product of the index ranges
        _check_budget(tuple(m.size for m in margs), budget)
        idx = [np.arange(m.size) for m in margs]
        steps = np.zeros(tuple(m.size for m in margs))
        for p in range(l):
            for q in range(p + 1, l):
                sp, sq = [1] * l, [1] * l
                sp[p], sq[q] = idx[p].size, idx[q].size
                steps = steps + np.abs(idx[p].reshape(sp) - idx[q].reshape(sq))
        cost = grid.h * steps
    else:
        cost = dense_cost(grid, l, budget).values
    K = np.exp(-cost / config.epsilon)
    return _run_dense(K, margs, config, cost, "dense")


def dense_sinkhorn_2d(u: Marginal2D, v: Marginal2D, w: Marginal2D,
                      config: SinkhornConfig = SinkhornConfig(), budget: int = ELEMENT_BUDGET):
    if not (u.shape == v.shape == w.shape):
        raise ShapeMismatch("2D marginals must share one shape")
    cost = dense_cost_2d(u.shape, u.h1, u.h2, budget).values
    K = np.exp(-cost / config.epsilon)
    state, report = _run_dense(K, [u.flat(), v.flat(), w.flat()], config, cost, "dense2d")
    n, m = u.shape
    fields = tuple(s.reshape((n, m), order="F") for s in state.scalings)
    return ScalingState(fields, epsilon=config.epsilon), report
