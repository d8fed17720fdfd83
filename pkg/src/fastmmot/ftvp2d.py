"""Products and Sinkhorn driver for the 2D problem.

Fields are (N, M) arrays ``f[i1, i2]``; flattening, where needed, is
column-major, so column ``f[:, i2]`` is one contiguous block.  The 2D kernel
is the tensor product of two 1D kernels, so the product is an outer
recursion over columns (decay ``lam2``) whose terms are batched 1D products
along the columns (decay ``lam1``).
"""

from __future__ import annotations

import math
import time

import numpy as np

from . import _backend
from .core import (
    InvalidParam,
    Marginal2D,
    NonFinite,
    NumericalOverflow,
    ScalingState,
    ShapeMismatch,
    SinkhornConfig,
)
from .solver import _report, run_sinkhorn


def _scan(coef, x, reverse=False):
    """Scan along axis 1 with a scalar or per-entry coefficient."""
    k = _backend.kernels
    if np.ndim(coef) == 0:
        return k.scan_const(float(coef), x.T, reverse).T
    return k.scan_var(coef.T, x.T, reverse).T


def _shift(x, reverse=False):
    """Column k receives column k-1 (k+1 when reverse); the vacated column is 0."""
    out = np.zeros_like(x)
    if reverse:
        out[:, :-1] = x[:, 1:]
    else:
        out[:, 1:] = x[:, :-1]
    return out


def _wscan(coef, x, reverse=False, xh=None):
    """Scan plus its distance-weighted twin (two exponent units per column step)."""
    s = _scan(coef, x, reverse)
    drive = coef * 2.0 * _shift(s, reverse)
    if xh is not None:
        drive = drive + xh
    return s, _scan(coef, drive, reverse)


def _step_coefficients(pot, L):
    """Forward and reverse step factors exp(L + pot[k-1] - pot[k]) and exp(L + pot[k+1] - pot[k])."""
    fwd = np.zeros_like(pot)
    rev = np.zeros_like(pot)
    fwd[:, 1:] = np.exp(L + pot[:, :-1] - pot[:, 1:])
    rev[:, :-1] = np.exp(L + pot[:, 1:] - pot[:, :-1])
    return fwd, rev


def sweep(phi, psi, log_mu, inner, pots=None, weighted=False):
    """Outer recursion over columns.

    ``inner(x, y, p)`` contracts column batches (N, B) and receives the
    matching potential columns ``p = (px, py, pz)`` or ``None``.  ``log_mu``
    is the log of the per-column decay (2 log lam2).  Returns the product,
    or with ``weighted`` the product weighted by the column-axis distance
    in grid steps.
    """
    phi = np.asfortranarray(phi, dtype=np.float64)
    psi = np.asfortranarray(psi, dtype=np.float64)
    n, m = phi.shape
    eL = math.exp(log_mu)
    if pots is None:
        fa = ra = fb = rb = fg = rg = eL

        def call(x, y, cols):
            return inner(x, y, None)
    else:
        a, b, g = (np.asfortranarray(p, dtype=np.float64) for p in pots)
        fa, ra = _step_coefficients(a, log_mu)
        fb, rb = _step_coefficients(b, log_mu)
        fwd_g, rev_g = _step_coefficients(-g, log_mu)
        fg, rg = fwd_g, rev_g

        def call(x, y, cols):
            sa, sb, sg = cols
            return inner(x, y, (a[:, sa], b[:, sb], g[:, sg]))

    every = slice(None)
    head, tail = slice(None, -1), slice(1, None)

    A, Ah = _wscan(fa, phi)
    Bp, Bh = _wscan(fb, psi)
    sC, sCh = _wscan(rb, psi, reverse=True)
    sD, sDh = _wscan(ra, phi, reverse=True)
    C, Ch = eL * sC, eL * (sCh + 2.0 * sC)
    D, Dh = eL * sD, eL * (sDh + 2.0 * sD)

    def placed(values, where):
        out = np.zeros((n, m), order="F")
        if values is not None:
            out[:, where] = values
        return out

    F1 = call(A, psi, (every, every, every))
    F2 = placed(eL * call(phi[:, 1:], Bp[:, :-1], (tail, head, tail)) if m > 1 else None, tail)
    J3 = placed(call(A[:, :-1], C[:, 1:], (head, tail, head)) if m > 1 else None, head)
    J4 = placed(call(D[:, 1:], Bp[:, :-1], (tail, head, head)) if m > 1 else None, head)
    F5 = placed(call(phi[:, 1:], C[:, 1:], (tail, tail, head)) if m > 1 else None, head)
    F6 = placed(eL * call(D[:, 2:], psi[:, 1:-1], (slice(2, None), slice(1, -1), slice(None, -2)))
                if m > 2 else None, slice(None, -2))
    J1 = _scan(fg, F1)
    J2 = _scan(fg, F2)
    J5 = _scan(rg, F5, reverse=True)
    J6 = _scan(rg, F6, reverse=True)
    if not weighted:
        return J1 + J2 + J3 + J4 + J5 + J6

    G1 = call(Ah, psi, (every, every, every))
    G2 = placed(eL * call(phi[:, 1:], Bh[:, :-1] + 2.0 * Bp[:, :-1], (tail, head, tail))
                if m > 1 else None, tail)
    H3 = placed(call(Ah[:, :-1], C[:, 1:], (head, tail, head))
                + call(A[:, :-1], Ch[:, 1:], (head, tail, head)) if m > 1 else None, head)
    H4 = placed(call(Dh[:, 1:], Bp[:, :-1], (tail, head, head))
                + call(D[:, 1:], Bh[:, :-1], (tail, head, head)) if m > 1 else None, head)
    G5 = placed(call(phi[:, 1:], Ch[:, 1:], (tail, tail, head)) if m > 1 else None, head)
    G6 = placed(eL * call(Dh[:, 2:] + 2.0 * D[:, 2:], psi[:, 1:-1],
                          (slice(2, None), slice(1, -1), slice(None, -2)))
                if m > 2 else None, slice(None, -2))
    H1 = _scan(fg, G1 + fg * 2.0 * _shift(J1))
    H2 = _scan(fg, G2 + fg * 2.0 * _shift(J2))
    H5 = _scan(rg, G5 + rg * 2.0 * _shift(J5, True), reverse=True)
    H6 = _scan(rg, G6 + rg * 2.0 * _shift(J6, True), reverse=True)
    return H1 + H2 + H3 + H4 + H5 + H6


# ---------------------------------------------------------------- inner products

def _inner_plain(log_lam1):
    lam = math.exp(log_lam1)
    return lambda x, y, p: _backend.kernels.ftvp1(x, y, lam)


def _inner_cost_units(log_lam1):
    lam = math.exp(log_lam1)
    return lambda x, y, p: _backend.kernels.ftvp2(x, y, lam, 1.0)


def _inner_log(log_lam1):
    return lambda x, y, p: _backend.kernels.ftvp_log(x, y, p[0], p[1], p[2], log_lam1)


def _inner_log_cost_units(log_lam1):
    return lambda x, y, p: _backend.kernels.ftvp_log_cost(x, y, p[0], p[1], p[2], log_lam1, 1.0)


# ---------------------------------------------------------------- public products

def _fields(*fields):
    arrs = [np.asfortranarray(f, dtype=np.float64) for f in fields]
    if arrs[0].ndim != 2 or 0 in arrs[0].shape:
        raise ShapeMismatch(f"expected nonempty (N, M) fields, got shape {arrs[0].shape}")
    for f in arrs[1:]:
        if f.shape != arrs[0].shape:
            raise ShapeMismatch(f"field shapes differ: {arrs[0].shape} vs {f.shape}")
    for f in arrs:
        if not np.all(np.isfinite(f)):
            raise NonFinite("field contains NaN or infinite entries")
    return arrs


def _log(lam):
    if not 0.0 < lam <= 1.0:
        raise InvalidParam(f"decay factor must lie in (0, 1], got {lam}")
    return math.log(lam)


def ftvp2d_1(phi, psi, lam1: float, lam2: float) -> np.ndarray:
    """Sum over (i1, i2, j1, j2) of K1 K2 phi[i1, i2] psi[j1, j2], free index (k1, k2)."""
    phi, psi = _fields(phi, psi)
    _log(lam1), _log(lam2)
    return _backend.kernels.ftvp2d_1(phi, psi, lam1, lam2)


def ftvp2d_2(phi, psi, lam1: float, lam2: float, h1: float, h2: float) -> np.ndarray:
    """Cost-weighted 2D product.

    The cost is additive over the axes and the kernel factors, so the result
    is an axis-1 weighted inner product under a plain column recursion plus a
    plain inner product under a weighted column recursion.
    """
    phi, psi = _fields(phi, psi)
    if not (h1 > 0 and h2 > 0):
        raise InvalidParam("grid spacings must be positive")
    return _cost_product(phi, psi, _log(lam1), _log(lam2), h1, h2)


def _cost_product(phi, psi, ll1, ll2, h1, h2, pots=None):
    if pots is None:
        first, second = _inner_cost_units(ll1), _inner_plain(ll1)
    else:
        first, second = _inner_log_cost_units(ll1), _inner_log(ll1)
    axis1 = sweep(phi, psi, 2.0 * ll2, first, pots)
    axis2 = sweep(phi, psi, 2.0 * ll2, second, pots, weighted=True)
    return h1 * axis1 + h2 * axis2


def ftvp2d_log(phi, psi, alpha, beta, gamma, lam1: float, lam2: float, epsilon: float) -> np.ndarray:
    """2D product against the kernel rescaled by exp((alpha + beta + gamma) / epsilon)."""
    phi, psi, a, b, g = _fields(phi, psi, alpha, beta, gamma)
    ll1, ll2 = _log(lam1), _log(lam2)
    return sweep(phi, psi, 2.0 * ll2, _inner_log(ll1), (a / epsilon, b / epsilon, g / epsilon))


def ftvp2d_log_cost(phi, psi, alpha, beta, gamma, lam1: float, lam2: float, h1: float, h2: float,
                    epsilon: float) -> np.ndarray:
    phi, psi, a, b, g = _fields(phi, psi, alpha, beta, gamma)
    return _cost_product(phi, psi, _log(lam1), _log(lam2), h1, h2,
                         (a / epsilon, b / epsilon, g / epsilon))


# ---------------------------------------------------------------- solver

def _marginals_2d(u, v, w):
    ms = [m if isinstance(m, Marginal2D) else Marginal2D.on_unit_square(m) for m in (u, v, w)]
    if not (ms[0].shape == ms[1].shape == ms[2].shape):
        raise ShapeMismatch("the three 2D marginals must share one shape")
    if len({(m.h1, m.h2) for m in ms}) != 1:
        raise ShapeMismatch("the three 2D marginals must share one grid")
    return ms


def fast_sinkhorn_2d(u, v, w, config: SinkhornConfig = SinkhornConfig(), callback=None):
    """Three-marginal Sinkhorn on N x M grids with O(NM) work per iteration."""
    ms = _marginals_2d(u, v, w)
    h1, h2 = ms[0].h1, ms[0].h2
    eps = config.epsilon
    ll1, ll2 = -h1 / eps, -h2 / eps
    lam1, lam2 = math.exp(ll1), math.exp(ll2)
    kern = _backend.kernels

    def contract(j, s):
        x, y = [s[q] for q in range(3) if q != j]
        return kern.ftvp2d_1(x, y, lam1, lam2)

    log_inner = _inner_log(ll1)

    def log_contract(j, s, p):
        x, y = [s[q] for q in range(3) if q != j]
        px, py = [p[q] for q in range(3) if q != j]
        return sweep(x, y, 2.0 * ll2, log_inner, (px, py, p[j]))

    t0 = time.perf_counter()
    name = "fast2d-stabilized" if config.stabilize else "fast2d"
    margs = [np.asfortranarray(m.weights) for m in ms]
    try:
        scal, pots, residuals, absorptions, _ = run_sinkhorn(margs, contract, config, log_contract, callback)
    except NumericalOverflow as exc:
        res, absn = exc.report
        exc.report = _report(math.nan, res, absn, config, time.perf_counter() - t0, name)
        raise
    state = ScalingState(tuple(scal), tuple(pots), epsilon=eps)
    dist = distance_2d(state, h1, h2)
    return state, _report(dist, residuals, absorptions, config, time.perf_counter() - t0, name)


def distance_2d(state: ScalingState, h1: float, h2: float) -> float:
    phi, psi, chi = state.scalings
    eps = state.epsilon
    ll1, ll2 = -h1 / eps, -h2 / eps
    pots = None
    if state.has_potentials:
        pots = tuple(p / eps for p in state.potentials)
    prod = _cost_product(np.asfortranarray(phi), np.asfortranarray(psi), ll1, ll2, h1, h2, pots)
    return float(np.sum(chi * prod))
