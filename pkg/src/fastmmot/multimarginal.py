"""Linear-time products and Sinkhorn for l marginals.

The index cube is split into l! regions by the sort order of the indices.
Inside one region the exponent sum_{p<q} |i_p - i_q| is a weighted sum of the
gaps between consecutive sorted indices, gap r (between ranks r and r+1,
0-based) carrying weight (r+1)(l-r-1).  The product then becomes a chain of
prefix scans from the lowest rank up to the free index and suffix scans from
the highest rank down to it.  Ties are broken by marginal number: the step
from rank r to r+1 is strict exactly when the marginal at rank r has the
larger number, which makes the regions a partition.
"""

from __future__ import annotations

import itertools
import math
import time
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _backend
from .core import (
    FactorialBudget,
    Grid1D,
    InvalidParam,
    KernelParams,
    NonFinite,
    NumericalOverflow,
    ScalingState,
    ShapeMismatch,
    SinkhornConfig,
    validate_marginal,
)
from .solver import _report, run_sinkhorn

MAX_MARGINALS = 8


@dataclass(frozen=True)
class RegionSpec:
    perm: tuple  # perm[r] = 0-based marginal at sorted rank r
    strict: tuple  # strict[r]: rank r -> r+1 is "<" rather than "<="

    @property
    def order(self) -> int:
        return len(self.perm)

    @property
    def rank_coefficients(self) -> tuple:
        l = self.order
        return tuple(2 * r - l - 1 for r in range(1, l + 1))

    def gap_weights(self) -> tuple:
        l = self.order
        return tuple((r + 1) * (l - r - 1) for r in range(l - 1))

    def contains(self, index) -> bool:
        vals = [index[m] for m in self.perm]
        for r in range(self.order - 1):
            if self.strict[r]:
                if not vals[r] < vals[r + 1]:
                    return False
            elif not vals[r] <= vals[r + 1]:
                return False
        return True

    def describe(self, names="ijklmnop") -> str:
        parts = [names[self.perm[0]]]
        for r in range(1, self.order):
            parts.append("<" if self.strict[r - 1] else "<=")
            parts.append(names[self.perm[r]])
        return " ".join(parts)


def _check_order(l: int):
    if int(l) != l or l < 2:
        raise InvalidParam(f"need at least two marginals, got {l}")
    if l > MAX_MARGINALS:
        raise FactorialBudget(f"{l} marginals means {math.factorial(l)} regions; the cap is {MAX_MARGINALS}")


@lru_cache(maxsize=None)
def _perms(l: int) -> tuple:
    if l == 1:
        return ((0,),)
    out = []
    top = l - 1
    # the highest marginal goes from the last rank to the first; within each
    # position the remaining marginals follow the order for l - 1
    for pos in range(l - 1, -1, -1):
        for rest in _perms(l - 1):
            out.append(rest[:pos] + (top,) + rest[pos:])
    return tuple(out)


def region_table(l: int) -> list:
    _check_order(l)
    return [
        RegionSpec(p, tuple(p[r] > p[r + 1] for r in range(l - 1)))
        for p in _perms(l)
    ]


# ---------------------------------------------------------------- scans on vectors

def _scan(coef, x, reverse=False):
    k = _backend.kernels
    col = x.reshape(-1, 1)
    if np.ndim(coef) == 0:
        return k.scan_const(float(coef), col, reverse)[:, 0]
    return k.scan_var(coef.reshape(-1, 1), col, reverse)[:, 0]


def _shift(x, reverse):
    out = np.zeros_like(x)
    if reverse:
        out[:-1] = x[1:]
    else:
        out[1:] = x[:-1]
    return out


def _step(log_decay, pot, reverse):
    """Per-step factor exp(log_decay + pot[prev] - pot[x]); scalar without potentials."""
    if pot is None:
        return math.exp(log_decay)
    c = np.zeros_like(pot)
    if reverse:
        c[:-1] = np.exp(log_decay + pot[1:] - pot[:-1])
    else:
        c[1:] = np.exp(log_decay + pot[:-1] - pot[1:])
    return c


def _link(val, twin, coef, weight, strict, reverse, weighted):
    """Sum over neighbours y <= x (y < x when strict) of decay^(x-y) val(y), with its twin."""
    s = _scan(coef, val, reverse)
    if weighted:
        twin = _scan(coef, twin + coef * weight * _shift(s, reverse), reverse)
    if strict:
        prev = _shift(s, reverse)
        s = coef * prev
        if weighted:
            twin = coef * (_shift(twin, reverse) + weight * prev)
    return s, twin


def _chain(vecs, pots, perm, strict, weights, log_lam, weighted, reverse):
    """Fold one side of the sorted chain up to (excluding) the free rank.

    ``perm``/``strict``/``weights`` are already ordered from the outermost
    rank inwards.  Returns (value, twin, potential sum) relative to the
    potentials of every folded marginal evaluated at the current index.
    """
    val = vecs[perm[0]]
    twin = np.zeros_like(val)
    psum = None if pots is None else pots[perm[0]].copy()
    for step in range(len(weights)):
        coef = _step(weights[step] * log_lam, psum, reverse)
        val, twin = _link(val, twin, coef, weights[step], strict[step], reverse, weighted)
        nxt = perm[step + 1]
        if nxt is None:
            break
        val = vecs[nxt] * val
        twin = vecs[nxt] * twin
        if psum is not None:
            psum = psum + pots[nxt]
    return val, twin, psum


def _region_terms(vecs, pots, free_pot, spec, log_lam, weighted, cache):
    l = spec.order
    perm = spec.perm
    free = l - 1
    s = perm.index(free)
    n = vecs[0].size
    gw = spec.gap_weights()
    one, zero = np.ones(n), np.zeros(n)

    if s > 0:
        key = ("L",) + perm[: s + 1] + spec.strict[:s]
        if key not in cache:
            seq = perm[:s] + (None,)
            cache[key] = _chain(vecs, pots, seq, spec.strict[:s], gw[:s], log_lam, weighted, False)
        A, Ah, P = cache[key]
    else:
        A, Ah, P = one, zero, None
    if s < l - 1:
        key = ("R",) + perm[s:] + spec.strict[s:]
        if key not in cache:
            seq = perm[s + 1:][::-1] + (None,)
            cache[key] = _chain(vecs, pots, seq, spec.strict[s:][::-1], gw[s:][::-1], log_lam,
                                weighted, True)
        B, Bh, Q = cache[key]
    else:
        B, Bh, Q = one, zero, None

    scale = None
    if pots is not None:
        total = free_pot.copy()
        for part in (P, Q):
            if part is not None:
                total = total + part
        scale = np.exp(total)
    value = A * B
    twin = Ah * B + A * Bh if weighted else None
    if scale is not None:
        value = value * scale
        if weighted:
            twin = twin * scale
    return value, twin


def _prepare(vectors, l, pots=None, free_pot=None):
    _check_order(l)
    vecs = [np.asarray(v, dtype=np.float64).reshape(-1) for v in vectors]
    if len(vecs) != l - 1:
        raise ShapeMismatch(f"{l} marginals need {l - 1} vectors, got {len(vecs)}")
    n = vecs[0].size
    if n == 0 or any(v.size != n for v in vecs):
        raise ShapeMismatch("vectors must be nonempty and of equal length")
    if any(not np.all(np.isfinite(v)) for v in vecs):
        raise NonFinite("input contains NaN or infinite entries")
    if pots is not None:
        pots = [np.asarray(p, dtype=np.float64).reshape(-1) for p in pots]
        free_pot = np.asarray(free_pot, dtype=np.float64).reshape(-1)
        if len(pots) != l - 1 or any(p.size != n for p in pots) or free_pot.size != n:
            raise ShapeMismatch("potentials must match the vectors")
    return vecs, pots, free_pot


def _log_decay(lam, log_lam):
    if log_lam is not None:
        return float(log_lam)
    if not 0.0 < lam <= 1.0:
        raise InvalidParam(f"decay factor must lie in (0, 1], got {lam}")
    return math.log(lam)


def ftvp_lm(vectors, lam: float, l: int, log_lam: float = None, potentials=None,
            free_potential=None) -> np.ndarray:
    """Kernel of order l contracted with l-1 vectors; the free index is the last mode.

    ``potentials`` (one per vector) and ``free_potential`` rescale the kernel
    by exp(sum of potentials); they are taken as already divided by epsilon.
    """
    vecs, pots, fp = _prepare(vectors, l, potentials, free_potential)
    ll = _log_decay(lam, log_lam)
    cache = {}
    out = np.zeros(vecs[0].size)
    for spec in region_table(l):
        out += _region_terms(vecs, pots, fp, spec, ll, False, cache)[0]
    return out


def ftvp_lm_cost(vectors, lam: float, l: int, h: float, log_lam: float = None, potentials=None,
                 free_potential=None) -> np.ndarray:
    """Cost-weighted version of :func:`ftvp_lm`; ``h`` is applied once."""
    if not h > 0:
        raise InvalidParam(f"h must be positive, got {h}")
    vecs, pots, fp = _prepare(vectors, l, potentials, free_potential)
    ll = _log_decay(lam, log_lam)
    cache = {}
    out = np.zeros(vecs[0].size)
    for spec in region_table(l):
        out += _region_terms(vecs, pots, fp, spec, ll, True, cache)[1]
    return h * out


def ftvp_lm_regions(vectors, lam: float, l: int) -> np.ndarray:
    """Per-region partial sums, shape (l!, N), in region_table order."""
    vecs, _, _ = _prepare(vectors, l)
    ll = _log_decay(lam, None)
    cache = {}
    return np.array([_region_terms(vecs, None, None, spec, ll, False, cache)[0]
                     for spec in region_table(l)])


def fast_sinkhorn_lm(marginals, grid: Grid1D, config: SinkhornConfig = SinkhornConfig(), callback=None):
    """Sinkhorn for l marginals with O(l! l N) work per update."""
    margs = [validate_marginal(m).weights for m in marginals]
    l = len(margs)
    if l < 3:
        raise InvalidParam(f"need at least three marginals, got {l}")
    _check_order(l)
    if len({m.size for m in margs}) != 1:
        from .oracle import dense_sinkhorn_lm

        warnings.warn("marginals of unequal length: using the dense solver", RuntimeWarning)
        return dense_sinkhorn_lm(margs, grid, config)
    if margs[0].size != grid.n:
        raise ShapeMismatch(f"marginals have length {margs[0].size}, grid has {grid.n} points")
    params = KernelParams(grid.h, config.epsilon)
    ll = params.log_lam

    def contract(j, s):
        return ftvp_lm([s[q] for q in range(l) if q != j], None, l, log_lam=ll)

    def log_contract(j, s, p):
        return ftvp_lm([s[q] for q in range(l) if q != j], None, l, log_lam=ll,
                       potentials=[p[q] for q in range(l) if q != j], free_potential=p[j])

    t0 = time.perf_counter()
    name = f"fast-l{l}" + ("-stabilized" if config.stabilize else "")
    try:
        scal, pots, residuals, absorptions, _ = run_sinkhorn(margs, contract, config, log_contract, callback)
    except NumericalOverflow as exc:
        res, absn = exc.report
        exc.report = _report(math.nan, res, absn, config, time.perf_counter() - t0, name)
        raise
    state = ScalingState(tuple(scal), tuple(pots), epsilon=config.epsilon)
    dist = distance_lm(state, grid)
    return state, _report(dist, residuals, absorptions, config, time.perf_counter() - t0, name)


def distance_lm(state: ScalingState, grid: Grid1D) -> float:
    l = state.order
    ll = -grid.h / state.epsilon
    scal = state.scalings
    kwargs = {}
    if state.has_potentials:
        p = [x / state.epsilon for x in state.potentials]
        kwargs = {"potentials": p[:-1], "free_potential": p[-1]}
    prod = ftvp_lm_cost(scal[:-1], None, l, grid.h, log_lam=ll, **kwargs)
    return float(np.dot(scal[-1], prod))


def sorted_rank_identity(values) -> tuple:
    """(sum over pairs of differences, sum of rank coefficient times sorted value)."""
    x = sorted(values)
    l = len(x)
    pairs = sum(x[q] - x[p] for p, q in itertools.combinations(range(l), 2))
    ranked = sum((2 * r - l - 1) * x[r - 1] for r in range(1, l + 1))
    return pairs, ranked
