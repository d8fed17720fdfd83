"""Sinkhorn drivers built on the linear-time products."""

from __future__ import annotations

import math
import time
from typing import Callable, Sequence

import numpy as np

from . import _backend
from .core import (
    Grid1D,
    KernelParams,
    NumericalOverflow,
    ScalingState,
    ShapeMismatch,
    SinkhornConfig,
    SolveReport,
    validate_marginal,
)


def safe_divide(marg: np.ndarray, denom: np.ndarray) -> np.ndarray:
    """marg / denom with 0 wherever the marginal itself is 0."""
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        q = marg / denom
    q[marg == 0] = 0.0
    return q


def _residual_modes(l: int, mode: str) -> range:
    return range(l) if mode == "full" else range(l - 1)


def run_sinkhorn(marginals: Sequence[np.ndarray], contract: Callable, config: SinkhornConfig,
                 log_contract: Callable = None, callback: Callable = None, init=None):
    """Cyclic scaling updates shared by every fast solver.

    ``contract(j, scalings)`` returns the kernel contracted with every
    scaling except the j-th.  When ``config.stabilize`` is set,
    ``log_contract(j, scalings, potentials)`` must do the same for the kernel
    rescaled by the potentials (already divided by epsilon); it is only used
    once something has been absorbed.

    Returns (scalings, potentials, residuals, absorptions, iterations).  A
    non-finite scaling or residual raises NumericalOverflow.
    """
    l = len(marginals)
    margs = [np.asarray(m, dtype=np.float64) for m in marginals]
    if init is None:
        scal = [np.full(m.shape, 1.0 / m.size) for m in margs]
    else:
        scal = [np.array(s, dtype=np.float64) for s in init]
    pots = [np.zeros(m.shape) for m in margs]
    logged = False
    eps = config.epsilon
    checked = _residual_modes(l, config.residual_mode)
    residuals, absorptions = [], []
    res = math.inf
    t = 0

    def product(j):
        if logged:
            return log_contract(j, scal, [p / eps for p in pots])
        return contract(j, scal)

    def fail(msg):
        return NumericalOverflow(msg, iteration=t, report=(residuals, absorptions))

    while t < config.itr_max and res > config.tol:
        t += 1
        for j in range(l):
            scal[j] = safe_divide(margs[j], product(j))
            if not np.all(np.isfinite(scal[j])):
                raise fail(f"non-finite scaling for marginal {j + 1} in iteration {t}")
        res = 0.0
        with np.errstate(over="ignore", invalid="ignore"):
            for j in checked:
                res += float(np.abs(scal[j] * product(j) - margs[j]).sum())
        if not math.isfinite(res):
            raise fail(f"non-finite residual in iteration {t}")
        residuals.append(res)
        count = 0
        if config.stabilize and _needs_absorption(scal, config.tau):
            for j in range(l):
                absorb(scal[j], pots[j], eps)
            count = l
            logged = True
        absorptions.append(count)
        if callback is not None:
            callback(t, scal, pots, res)
    return scal, pots, residuals, absorptions, t


def absorb(scaling: np.ndarray, potential: np.ndarray, epsilon: float):
    """Move the positive entries of ``scaling`` into ``potential`` in place.

    scaling * exp(potential / epsilon) is unchanged; zero entries stay zero.
    """
    pos = scaling > 0
    potential[pos] += epsilon * np.log(scaling[pos])
    scaling[pos] = 1.0


def _needs_absorption(scal, tau):
    for s in scal:
        pos = s[s > 0]
        if pos.size and (pos.max() > tau or pos.min() < 1.0 / tau):
            return True
    return False


def _marginal_vectors(u, v, w):
    margs = [validate_marginal(m).weights for m in (u, v, w)]
    if not (margs[0].size == margs[1].size == margs[2].size):
        raise ShapeMismatch("the three marginals must have the same length")
    return margs


def _contract_3m(params: KernelParams):
    k = _backend.kernels
    lam = params.lam

    def contract(j, s):
        x, y = [s[q] for q in range(3) if q != j]
        return k.ftvp1(x.reshape(-1, 1), y.reshape(-1, 1), lam)[:, 0]

    def log_contract(j, s, p):
        x, y = [s[q] for q in range(3) if q != j]
        px, py = [p[q] for q in range(3) if q != j]
        col = lambda z: z.reshape(-1, 1)
        return k.ftvp_log(col(x), col(y), col(px), col(py), col(p[j]), params.log_lam)[:, 0]

    return contract, log_contract


def fast_sinkhorn_3m(u, v, w, grid: Grid1D, config: SinkhornConfig = SinkhornConfig(),
                     callback: Callable = None):
    """Three-marginal Sinkhorn with O(N) work per iteration.

    Without stabilization and callback the whole loop runs in the backend.
    ``callback(t, scalings, potentials, residual)`` is called after each
    iteration; it sees the live arrays and must not modify them.
    """
    margs = _marginal_vectors(u, v, w)
    if margs[0].size != grid.n:
        raise ShapeMismatch(f"marginals have length {margs[0].size}, grid has {grid.n} points")
    params = KernelParams(grid.h, config.epsilon)
    t0 = time.perf_counter()
    name = "fast"
    if not config.stabilize and callback is None:
        n = grid.n
        scal = [np.full(n, 1.0 / n) for _ in range(3)]
        buf = np.zeros(int(config.itr_max))
        iters, status = _backend.kernels.sinkhorn3(
            *margs, params.lam, config.tol, int(config.itr_max),
            config.residual_mode == "full", *scal, buf,
        )
        residuals = buf[: iters if status == 0 else iters - 1].tolist()
        if status != 0:
            report = _report(math.nan, residuals, [0] * len(residuals), config,
                             time.perf_counter() - t0, name)
            raise NumericalOverflow(f"non-finite value in iteration {iters}", iteration=iters, report=report)
        pots = [np.zeros(n) for _ in range(3)]
        absorptions = [0] * iters
    else:
        contract, log_contract = _contract_3m(params)
        if config.stabilize:
            name = "fast-stabilized"
        try:
            scal, pots, residuals, absorptions, iters = run_sinkhorn(
                margs, contract, config, log_contract, callback)
        except NumericalOverflow as exc:
            res, absn = exc.report
            exc.report = _report(math.nan, res, absn, config, time.perf_counter() - t0, name)
            raise
    state = ScalingState(tuple(scal), tuple(pots), epsilon=config.epsilon)
    dist = distance(state, grid, params)
    return state, _report(dist, residuals, absorptions, config, time.perf_counter() - t0, name)


def fast_sinkhorn_3m_stabilized(u, v, w, grid: Grid1D, config: SinkhornConfig = None,
                                callback: Callable = None):
    if config is None:
        config = SinkhornConfig(stabilize=True)
    elif not config.stabilize:
        config = SinkhornConfig(**{**config.as_dict(), "stabilize": True})
    return fast_sinkhorn_3m(u, v, w, grid, config, callback)


def _report(dist, residuals, absorptions, config, elapsed, name):
    residuals = [float(r) for r in residuals]
    return SolveReport(
        distance=float(dist),
        iterations=len(residuals),
        residuals=residuals,
        converged=bool(residuals) and residuals[-1] <= config.tol,
        elapsed=elapsed,
        config=config.as_dict(),
        absorptions=list(absorptions),
        solver=name,
    )


def _state_params(state: ScalingState, grid: Grid1D, params: KernelParams = None):
    if params is None:
        params = KernelParams(grid.h, state.epsilon)
    if state.order != 3:
        raise ShapeMismatch(f"expected three scaling vectors, got {state.order}")
    if any(s.shape != (grid.n,) for s in state.scalings):
        raise ShapeMismatch("scaling vectors do not match the grid")
    return params


def residual(state: ScalingState, u, v, w, grid: Grid1D, mode: str = "skip_last",
             params: KernelParams = None) -> float:
    """Sum of absolute marginal violations (u and v; plus w in full mode)."""
    params = _state_params(state, grid, params)
    margs = _marginal_vectors(u, v, w)
    contract, log_contract = _contract_3m(params)
    scal = list(state.scalings)
    pots = [p / params.epsilon for p in state.potentials]
    use_log = state.has_potentials
    total = 0.0
    for j in _residual_modes(3, mode):
        prod = log_contract(j, scal, pots) if use_log else contract(j, scal)
        total += float(np.abs(scal[j] * prod - margs[j]).sum())
    return total


def distance(state: ScalingState, grid: Grid1D, params: KernelParams = None) -> float:
    """<chi, cost-weighted product of (phi, psi)>, the transport cost of the plan."""
    params = _state_params(state, grid, params)
    phi, psi, chi = (s.reshape(-1, 1) for s in state.scalings)
    k = _backend.kernels
    if state.has_potentials:
        a, b, g = (p.reshape(-1, 1) / params.epsilon for p in state.potentials)
        prod = k.ftvp_log_cost(phi, psi, a, b, g, params.log_lam, grid.h)
    else:
        prod = k.ftvp2(phi, psi, params.lam, grid.h)
    return float(np.dot(chi[:, 0], prod[:, 0]))
