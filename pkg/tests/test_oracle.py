import itertools

import numpy as np
import pytest

from fastmmot import oracle
from fastmmot.core import Grid1D, KernelParams, ScalingState, SinkhornConfig, SizeOverflow
from fastmmot.signals import random_instance

from conftest import loop_contract, loop_cost


def test_cost_entry_l3():
    c = oracle.dense_cost(Grid1D(2, 1.0), 3)
    assert c[0, 0, 1] == 2


def test_cost_entry_l4():
    c = oracle.dense_cost(Grid1D(3, 0.5), 4)
    assert c[0, 1, 2, 2] == pytest.approx(3.5)


@pytest.mark.parametrize("l", [2, 3, 4, 5])
def test_cost_diagonal_zero_and_matches_loop(l):
    grid = Grid1D(3, 0.25)
    c = oracle.dense_cost(grid, l)
    for idx in itertools.product(range(3), repeat=l):
        assert c[idx] == pytest.approx(loop_cost(idx, 0.25), abs=1e-15)
    for i in range(3):
        assert c[(i,) * l] == 0


def test_cost_symmetric():
    c = oracle.dense_cost(Grid1D(4, 1.0), 3).values
    for perm in itertools.permutations(range(3)):
        np.testing.assert_array_equal(c, c.transpose(perm))


def test_kernel_entry_and_ones():
    lam = 0.3
    eps = 1.0
    h = -np.log(lam) * eps
    K = oracle.dense_kernel(Grid1D(2, h), KernelParams(h, eps), 3)
    assert K[0, 0, 1] == pytest.approx(lam ** 2, rel=1e-14)
    grid = Grid1D(3, 1e-300)
    ones = oracle.dense_kernel(grid, KernelParams(1e-300, 1.0), 3)
    np.testing.assert_array_equal(ones.values, 1.0)


def test_kernel_is_exp_of_cost():
    grid = Grid1D(5, 0.2)
    p = KernelParams(0.2, 0.07)
    K = oracle.dense_kernel(grid, p, 3).values
    C = oracle.dense_cost(grid, 3).values
    np.testing.assert_allclose(K, np.exp(-C / 0.07), rtol=1e-15)
    assert np.all((K > 0) & (K <= 1))


def test_contract_all_ones(rng):
    phi, psi = rng.random(4), rng.random(4)
    out = oracle.dense_contract(np.ones((4, 4, 4)), [phi, psi], 2)
    np.testing.assert_allclose(out, phi.sum() * psi.sum())


def test_contract_single_entry():
    out = oracle.dense_contract(np.full((1, 1, 1), 0.7), [[2.0], [3.0]], 2)
    np.testing.assert_allclose(out, [4.2])


@pytest.mark.parametrize("free", [0, 1, 2])
def test_contract_matches_triple_loop(rng, free):
    grid = Grid1D(4, 0.3)
    p = KernelParams(0.3, 0.5)
    K = oracle.dense_kernel(grid, p, 3)
    a, b = rng.random(4), rng.random(4)
    out = oracle.dense_contract(K, [a, b], free)
    want = loop_contract([a, b], 4, p.lam, free=free)
    np.testing.assert_allclose(out, want, rtol=1e-13)


def test_contract_mode_symmetry(rng):
    grid = Grid1D(5, 0.3)
    K = oracle.dense_kernel(grid, KernelParams(0.3, 0.4), 3)
    a, b = rng.random(5), rng.random(5)
    ref = oracle.dense_contract(K, [a, b], 2)
    np.testing.assert_allclose(oracle.dense_contract(K, [a, b], 0), ref, rtol=1e-14)
    np.testing.assert_allclose(oracle.dense_contract(K, [a, b], 1), ref, rtol=1e-14)


def test_budget():
    with pytest.raises(SizeOverflow):
        oracle.dense_cost(Grid1D(500, 1.0), 3)
    with pytest.raises(SizeOverflow):
        oracle.dense_cost(Grid1D(10, 1.0), 3, budget=999)


def test_plan_identity_scaling_is_kernel():
    grid = Grid1D(3, 0.5)
    K = oracle.dense_kernel(grid, KernelParams(0.5, 0.3), 3)
    s = ScalingState((np.ones(3),) * 3)
    np.testing.assert_allclose(oracle.dense_plan(s, K).values, K.values, rtol=1e-15)


def test_point_mass_instance():
    d = [1.0, 0.0, 0.0, 0.0]
    grid = Grid1D.on_interval(4)
    state, rep = oracle.dense_sinkhorn(d, d, d, grid, SinkhornConfig())
    assert rep.iterations == 1
    assert rep.distance == 0.0
    K = np.exp(-oracle.dense_cost(grid, 3).values / 0.1)
    plan = oracle.dense_plan(state, K).values
    assert plan[0, 0, 0] == pytest.approx(1.0)
    assert plan.sum() == pytest.approx(1.0)


def _instance(n, seed=3):
    return random_instance(n, 3, seed), Grid1D.on_interval(n)


def test_residuals_decrease_after_first():
    (u, v, w), grid = _instance(10)
    _, rep = oracle.dense_sinkhorn(u, v, w, grid, SinkhornConfig(tol=1e-300))
    r = np.array(rep.residuals)
    assert len(r) == 100
    assert np.all(np.diff(r[1:]) < 0)


@pytest.mark.parametrize("mode", ["skip_last", "full"])
def test_plan_marginals_within_residual(mode):
    (u, v, w), grid = _instance(8)
    cfg = SinkhornConfig(tol=1e-8, itr_max=2000, residual_mode=mode)
    state, rep = oracle.dense_sinkhorn(u, v, w, grid, cfg)
    assert rep.converged
    K = np.exp(-oracle.dense_cost(grid, 3).values / 0.1)
    mu, mv, mw = oracle.marginals_of(oracle.dense_plan(state, K))
    viol = np.abs(mu - u.weights).sum() + np.abs(mv - v.weights).sum()
    if mode == "full":
        viol += np.abs(mw - w.weights).sum()
    assert viol <= rep.residuals[-1] + 1e-15
    # w is the last update, so it is exact in either mode
    np.testing.assert_allclose(mw, w.weights, atol=1e-15)


def test_plan_mass_one():
    (u, v, w), grid = _instance(5)
    state, rep = oracle.dense_sinkhorn(u, v, w, grid, SinkhornConfig())
    K = np.exp(-oracle.dense_cost(grid, 3).values / 0.1)
    assert oracle.dense_plan(state, K).values.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.all(oracle.dense_plan(state, K).values >= 0)


def test_distance_is_cost_plan_inner_product():
    (u, v, w), grid = _instance(10)
    state, rep = oracle.dense_sinkhorn(u, v, w, grid, SinkhornConfig())
    C = oracle.dense_cost(grid, 3).values
    K = np.exp(-C / 0.1)
    plan = oracle.dense_plan(state, K).values
    assert rep.distance == pytest.approx(float(np.sum(C * plan)), rel=1e-12)


def test_distance_all_ones_unit_kernel():
    grid = Grid1D(4, 0.5)
    C = oracle.dense_cost(grid, 3)
    s = ScalingState((np.ones(4),) * 3)
    assert oracle.dense_distance(s, C, np.ones((4, 4, 4))) == pytest.approx(C.values.sum())


def test_general_order_loop_matches_order3(backend):
    # order 3 runs in the backend loop, order 4 in the generic one; both must
    # agree with a plain re-implementation on a tiny case
    (u, v, w), grid = _instance(4)
    cfg = SinkhornConfig(itr_max=7, tol=1e-300)
    state, rep = oracle.dense_sinkhorn(u, v, w, grid, cfg)
    K = np.exp(-oracle.dense_cost(grid, 3).values / 0.1)
    s = [np.full(4, 0.25) for _ in range(3)]
    m = [u.weights, v.weights, w.weights]
    for _ in range(7):
        s[0] = m[0] / np.einsum("ijk,j,k->i", K, s[1], s[2])
        s[1] = m[1] / np.einsum("ijk,i,k->j", K, s[0], s[2])
        s[2] = m[2] / np.einsum("ijk,i,j->k", K, s[0], s[1])
    for a, b in zip(state.scalings, s):
        np.testing.assert_allclose(a, b, rtol=1e-12)


def test_dense_2d_point_mass():
    from fastmmot.core import Marginal2D

    w = np.zeros((3, 2))
    w[1, 1] = 1
    m = Marginal2D.on_unit_square(w)
    _, rep = oracle.dense_sinkhorn_2d(m, m, m, SinkhornConfig())
    assert rep.distance == 0.0


def test_dense_unequal_sizes():
    grid = Grid1D.on_interval(4)
    u, v, w = [1, 2, 3, 4], [1, 1, 1], [2, 1, 1, 1, 3]
    state, rep = oracle.dense_sinkhorn_lm([u, v, w], grid, SinkhornConfig(itr_max=500, tol=1e-10))
    assert [s.size for s in state.scalings] == [4, 3, 5]
    assert rep.converged
