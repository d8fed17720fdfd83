import itertools

import numpy as np
import pytest

from fastmmot import _backend

BACKENDS = sorted(_backend.AVAILABLE)


@pytest.fixture(params=BACKENDS)
def backend(request):
    with _backend.use(request.param):
        yield request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def loop_cost(idx, h=1.0):
    """Pairwise L1 cost of one index tuple, written out by hand."""
    total = 0
    for p in range(len(idx)):
        for q in range(p + 1, len(idx)):
            total += abs(idx[p] - idx[q])
    return h * total


def loop_contract(vectors, n, lam, free=None, weight=None, region=None, pots=None):
    """Order-l kernel contraction by explicit loops over every index tuple.

    ``vectors`` bind every mode except ``free`` (default: the last one).
    ``weight(idx)`` multiplies each term (e.g. the cost), ``region(idx)``
    restricts the sum, ``pots`` adds per-mode log factors.  Shares no code
    with the package's dense tensors.
    """
    l = len(vectors) + 1
    free = l - 1 if free is None else free
    out = np.zeros(n)
    for idx in itertools.product(range(n), repeat=l):
        if region is not None and not region(idx):
            continue
        expo = 0
        for p in range(l):
            for q in range(p + 1, l):
                expo += abs(idx[p] - idx[q])
        term = lam ** expo
        bound = [m for m in range(l) if m != free]
        for m, vec in zip(bound, vectors):
            term *= vec[idx[m]]
        if pots is not None:
            term *= np.exp(sum(pots[m][idx[m]] for m in range(l)))
        if weight is not None:
            term *= weight(idx)
        out[idx[free]] += term
    return out


def rel_err(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = max(np.max(np.abs(b)), 1e-300)
    return float(np.max(np.abs(a - b)) / scale)
