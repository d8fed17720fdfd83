import itertools
import math

import numpy as np
import pytest

from fastmmot import oracle
from fastmmot.core import FactorialBudget, Grid1D, InvalidParam, SinkhornConfig
from fastmmot.ftvp1d import ftvp1, ftvp2
from fastmmot.multimarginal import (
    MAX_MARGINALS,
    fast_sinkhorn_lm,
    ftvp_lm,
    ftvp_lm_cost,
    ftvp_lm_regions,
    region_table,
    sorted_rank_identity,
)
from fastmmot.signals import random_instance

from conftest import loop_contract, loop_cost, rel_err


def test_three_marginal_regions():
    got = [s.describe() for s in region_table(3)]
    assert got == [
        "i <= j <= k",
        "j < i <= k",
        "i <= k < j",
        "j <= k < i",
        "k < i <= j",
        "k < j < i",
    ]


def test_two_marginal_regions():
    assert [s.describe() for s in region_table(2)] == ["i <= j", "j < i"]


@pytest.mark.parametrize("l", [2, 3, 4, 5])
@pytest.mark.parametrize("n", [1, 2, 3, 6])
def test_partition_exact(l, n):
    if n ** l > 8000:
        n = 4
    specs = region_table(l)
    assert len(specs) == math.factorial(l)
    for idx in itertools.product(range(n), repeat=l):
        assert sum(s.contains(idx) for s in specs) == 1


def test_region_cardinalities_l4():
    specs = region_table(4)
    total = sum(sum(s.contains(idx) for idx in itertools.product(range(3), repeat=4)) for s in specs)
    assert total == 81


@pytest.mark.parametrize("l", [2, 3, 4, 5])
def test_sorted_rank_identity(l):
    for x in itertools.combinations_with_replacement(range(6), l):
        pairs, ranked = sorted_rank_identity(x)
        assert pairs == ranked
    spec = region_table(l)[0]
    assert spec.rank_coefficients == tuple(2 * r - l - 1 for r in range(1, l + 1))


def test_rank_coefficients_l3():
    assert region_table(3)[0].rank_coefficients == (-2, 0, 2)


def test_order_cap():
    region_table(MAX_MARGINALS)
    with pytest.raises(FactorialBudget):
        region_table(MAX_MARGINALS + 1)
    with pytest.raises(InvalidParam):
        region_table(1)


def test_l3_matches_specialized(backend, rng):
    phi, psi = rng.random(15), rng.random(15)
    assert rel_err(ftvp_lm([phi, psi], 0.7, 3), ftvp1(phi, psi, 0.7)) < 1e-12
    assert rel_err(ftvp_lm_cost([phi, psi], 0.7, 3, 0.1), ftvp2(phi, psi, 0.7, 0.1)) < 1e-10


@pytest.mark.parametrize("l", [3, 4, 5])
def test_unit_decay(backend, rng, l):
    vecs = [rng.random(5) for _ in range(l - 1)]
    want = math.prod(v.sum() for v in vecs)
    np.testing.assert_allclose(ftvp_lm(vecs, 1.0, l), want, rtol=1e-12)


@pytest.mark.parametrize("l", [2, 3, 4, 5])
def test_single_point_cost(backend, l):
    np.testing.assert_array_equal(ftvp_lm_cost([[2.0]] * (l - 1), 0.5, l, 0.3), [0.0])


@pytest.mark.parametrize("l,n", [(2, 6), (4, 5), (4, 1), (4, 2), (5, 4)])
def test_products_match_loops(backend, rng, l, n):
    lam, h = 0.6, 0.25
    vecs = [rng.random(n) + 0.05 for _ in range(l - 1)]
    assert rel_err(ftvp_lm(vecs, lam, l), loop_contract(vecs, n, lam)) < 1e-10
    want = loop_contract(vecs, n, lam, weight=lambda idx: loop_cost(idx, h))
    if np.any(want):
        assert rel_err(ftvp_lm_cost(vecs, lam, l, h), want) < 1e-10


def test_products_match_dense_oracle(backend, rng):
    n, l, eps = 5, 4, 0.3
    grid = Grid1D(n, 0.1)
    C = oracle.dense_cost(grid, l).values
    K = np.exp(-C / eps)
    vecs = [rng.random(n) for _ in range(l - 1)]
    lam = math.exp(-0.1 / eps)
    assert rel_err(ftvp_lm(vecs, lam, l), oracle.dense_contract(K, vecs, l - 1)) < 1e-10
    assert rel_err(ftvp_lm_cost(vecs, lam, l, 0.1), oracle.dense_contract(C * K, vecs, l - 1)) < 1e-10


@pytest.mark.parametrize("l", [3, 4])
def test_log_products_match_loops(backend, rng, l):
    n, lam, eps, h = 4, 0.5, 0.05, 0.2
    vecs = [rng.random(n) + 0.05 for _ in range(l - 1)]
    pots = [rng.normal(size=n) * 0.3 for _ in range(l)]
    want = loop_contract(vecs, n, lam, pots=pots)
    got = ftvp_lm(vecs, lam, l, potentials=pots[:-1], free_potential=pots[-1])
    assert rel_err(got, want) < 1e-10
    want_c = loop_contract(vecs, n, lam, pots=pots, weight=lambda idx: loop_cost(idx, h))
    got_c = ftvp_lm_cost(vecs, lam, l, h, potentials=pots[:-1], free_potential=pots[-1])
    assert rel_err(got_c, want_c) < 1e-10


@pytest.mark.parametrize("l,n", [(2, 5), (3, 5), (4, 4), (4, 6)])
def test_per_region_sums(rng, l, n):
    lam = 0.55
    vecs = [rng.random(n) for _ in range(l - 1)]
    regs = ftvp_lm_regions(vecs, lam, l)
    for spec, row in zip(region_table(l), regs):
        want = loop_contract(vecs, n, lam, region=spec.contains)
        np.testing.assert_allclose(row, want, rtol=1e-10, atol=1e-300)


def test_free_mode_symmetry(backend, rng):
    # the kernel is fully symmetric, so binding any l-1 modes with the same
    # vectors gives the same product as leaving the last one free
    n, l, lam = 5, 4, 0.45
    vecs = [rng.random(n) for _ in range(l - 1)]
    ref = ftvp_lm(vecs, lam, l)
    for free in range(l):
        assert rel_err(loop_contract(vecs, n, lam, free=free), ref) < 1e-12
    for perm in itertools.permutations(vecs):
        assert rel_err(ftvp_lm(list(perm), lam, l), ref) < 1e-12


def test_point_masses(backend):
    d = [1.0, 0.0, 0.0, 0.0]
    _, rep = fast_sinkhorn_lm([d] * 4, Grid1D.on_interval(4), SinkhornConfig())
    assert rep.distance == 0.0


def _plan_diff(margs, grid, cfg):
    fs, fr = fast_sinkhorn_lm(margs, grid, cfg)
    ds, dr = oracle.dense_sinkhorn_lm(margs, grid, cfg)
    K = np.exp(-oracle.dense_cost(grid, len(margs)).values / cfg.epsilon)
    return np.linalg.norm(oracle.dense_plan(fs, K).values - oracle.dense_plan(ds, K).values), fr, dr


def test_plan_difference_l4(backend):
    margs = random_instance(6, 4, seed=21)
    diff, fr, dr = _plan_diff(margs, Grid1D.on_interval(6), SinkhornConfig())
    assert diff <= 1e-12
    assert fr.distance == pytest.approx(dr.distance, rel=1e-10)


def test_l5_converges_to_tol():
    margs = random_instance(6, 5, seed=5)
    cfg = SinkhornConfig(tol=1e-7, itr_max=2000)
    state, rep = fast_sinkhorn_lm(margs, Grid1D.on_interval(6), cfg)
    assert rep.converged and rep.residuals[-1] <= 1e-7
    K = np.exp(-oracle.dense_cost(Grid1D.on_interval(6), 5).values / 0.1)
    ms = oracle.marginals_of(oracle.dense_plan(state, K))
    viol = sum(np.abs(ms[j] - margs[j].weights).sum() for j in range(4))
    assert viol <= rep.residuals[-1] + 1e-14


def test_stabilized_matches_plain(backend):
    margs = random_instance(6, 4, seed=8)
    grid = Grid1D.on_interval(6)
    _, plain = fast_sinkhorn_lm(margs, grid, SinkhornConfig(epsilon=0.05, itr_max=40, tol=1e-300))
    _, stab = fast_sinkhorn_lm(margs, grid, SinkhornConfig(epsilon=0.05, itr_max=40, tol=1e-300,
                                                           stabilize=True, tau=3.0))
    assert sum(stab.absorptions) > 0
    assert stab.distance == pytest.approx(plain.distance, rel=1e-8)


def test_unequal_sizes_use_dense():
    margs = [[1, 2, 3], [1, 1, 1, 1], [2, 1, 1]]
    with pytest.warns(RuntimeWarning):
        _, rep = fast_sinkhorn_lm(margs, Grid1D.on_interval(3), SinkhornConfig())
    assert rep.solver == "dense"


def test_time_growth(rng):
    # least-squares growth per doubling over 2^10..2^14, best of 7 runs each
    import time

    from fastmmot.bench import fit_slope

    sizes = [2 ** e for e in range(10, 15)]
    times = []
    for n in sizes:
        vecs = [rng.random(n) for _ in range(3)]
        ftvp_lm(vecs, 0.999, 4)
        best = math.inf
        for _ in range(7):
            t0 = time.perf_counter()
            ftvp_lm(vecs, 0.999, 4)
            best = min(best, time.perf_counter() - t0)
        times.append(best)
    assert 2 ** fit_slope(sizes, times) <= 2.5
