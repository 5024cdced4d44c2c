import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fgnn.bp import (MAX, SUM, BpConfig, beliefs, decode_map_from_beliefs, dense_factor_message, factor_to_var_update,
                     init_messages, iterate_bp, parity_factor_message_fast, run_bp, var_to_factor_update)
from fgnn.exact import exact_map, exact_marginals, map_is_unique
from fgnn.graph import DenseLog, Factor, ParityLog, build_graph

from helpers import random_loopy, random_tree


def test_init_messages():
    g = build_graph([2, 3], [Factor(0, [0, 1], DenseLog(np.zeros((2, 3))))])
    st_ = init_messages(g, SUM)
    np.testing.assert_array_equal(st_.var_to_factor[(0, 0)], [0.5, 0.5])
    np.testing.assert_allclose(st_.factor_to_var[(0, 1)], [1 / 3] * 3)
    assert all(np.all(v == 0) for v in init_messages(g, MAX).var_to_factor.values())


def star_graph():
    # variable 0 joined to three pairwise factors (ids 0, 1, 2)
    return build_graph([2] * 4, [Factor(c, [0, c + 1], DenseLog(np.zeros((2, 2)))) for c in range(3)])


def test_var_to_factor_examples():
    g = star_graph()
    s = init_messages(g, SUM)
    np.testing.assert_array_equal(var_to_factor_update(s, g, 1, 0), [0.5, 0.5])
    s.factor_to_var[(0, 0)] = np.array([0.2, 0.8])
    s.factor_to_var[(1, 0)] = np.array([0.5, 0.5])
    np.testing.assert_allclose(var_to_factor_update(s, g, 0, 2), [0.2, 0.8], atol=1e-15)

    g1 = build_graph([2, 2], [Factor(0, [0], DenseLog([0.0, 1.0])), Factor(1, [0, 1], DenseLog(np.zeros((2, 2))))])
    np.testing.assert_array_equal(var_to_factor_update(init_messages(g1, MAX), g1, 0, 1), [-1.0, 0.0])


def test_factor_to_var_examples():
    g = build_graph([2, 2], [Factor(0, [0], DenseLog(np.log([1.0, 3.0]))),
                             Factor(1, [0, 1], DenseLog(np.log([[1.0, 2.0], [3.0, 4.0]])))])
    s = init_messages(g, SUM)
    np.testing.assert_allclose(factor_to_var_update(s, g, 0, 0), [0.25, 0.75], atol=1e-15)
    np.testing.assert_allclose(factor_to_var_update(s, g, 1, 0), [0.3, 0.7], atol=1e-15)
    m = factor_to_var_update(init_messages(g, MAX), g, 1, 0)
    np.testing.assert_allclose(m, np.log([2.0, 4.0]) - np.log(4.0), atol=1e-15)


def test_message_normalization_invariants():
    g = random_loopy(np.random.default_rng(0))
    for mode in (SUM, MAX):
        for state, _ in iterate_bp(g, BpConfig(mode=mode, max_iterations=5)):
            for v in list(state.var_to_factor.values()) + list(state.factor_to_var.values()):
                if mode == SUM:
                    assert np.all(v >= 0) and abs(v.sum() - 1) < 1e-12
                else:
                    assert v.max() == 0.0


def test_single_factor_one_iteration():
    rng = np.random.default_rng(1)
    g = build_graph([2, 3], [Factor(0, [0, 1], DenseLog(rng.standard_normal((2, 3))))])
    res = run_bp(g, BpConfig(max_iterations=1))
    for a, b in zip(res.beliefs, exact_marginals(g)):
        np.testing.assert_allclose(a, b, atol=1e-14)


def test_trees_exact():
    rng = np.random.default_rng(2)
    for _ in range(20):
        g = random_tree(rng, int(rng.integers(2, 10)), card=int(rng.integers(2, 4)))
        res = run_bp(g)
        assert res.converged
        for a, b in zip(res.beliefs, exact_marginals(g)):
            np.testing.assert_allclose(a, b, atol=1e-8)
        if map_is_unique(g):
            mx = run_bp(g, BpConfig(mode=MAX))
            assert decode_map_from_beliefs(mx.beliefs) == exact_map(g).assignment


def test_chain_maxsum_agreement_is_total():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n = 8
        factors = [Factor(i, [i], DenseLog(rng.standard_normal(2))) for i in range(n)]
        factors += [Factor(n + i, [i, i + 1], DenseLog(rng.standard_normal((2, 2)))) for i in range(n - 1)]
        g = build_graph([2] * n, factors)
        if map_is_unique(g):
            assert decode_map_from_beliefs(run_bp(g, BpConfig(mode=MAX)).beliefs) == exact_map(g).assignment


def test_decode_examples():
    assert decode_map_from_beliefs([np.array([0.0, -1.0]), np.array([-2.0, 0.0])]) == (0, 1)
    assert decode_map_from_beliefs([np.array([0.0, 0.0])]) == (0,)


def test_parity_fast_examples():
    np.testing.assert_allclose(parity_factor_message_fast([np.array([0.9, 0.1])]), [0.9, 0.1], atol=1e-15)
    np.testing.assert_allclose(parity_factor_message_fast([np.array([0.5, 0.5])] * 2), [0.5, 0.5], atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2 ** 32 - 1), st.sampled_from([SUM, MAX]))
def test_parity_fast_matches_dense(degree, seed, mode):
    rng = np.random.default_rng(seed)
    table = np.where(np.indices((2,) * degree).sum(0) % 2 == 0, 0.0, -np.inf)
    if mode == SUM:
        table = np.exp(table)
        incoming = [rng.dirichlet([1.0, 1.0]) for _ in range(degree)]
    else:
        incoming = [rng.standard_normal(2) for _ in range(degree)]
    for slot in range(degree):
        msgs = [m if j != slot else None for j, m in enumerate(incoming)]
        dense = dense_factor_message(table, msgs, slot, mode)
        dense = dense / dense.sum() if mode == SUM else dense - dense.max()
        fast = parity_factor_message_fast(incoming[:slot] + incoming[slot + 1:], mode)
        np.testing.assert_allclose(fast, dense, atol=1e-10)


def test_parity_graph_fast_path_trajectory():
    rng = np.random.default_rng(4)
    n = 6
    factors = [Factor(i, [i], DenseLog(rng.standard_normal(2))) for i in range(n)]
    factors += [Factor(n, [0, 1, 2, 3], ParityLog()), Factor(n + 1, [2, 3, 4, 5], ParityLog()),
                Factor(n + 2, [0, 4, 5], ParityLog())]
    g = build_graph([2] * n, factors)
    for mode in (SUM, MAX):
        fast = iterate_bp(g, BpConfig(mode=mode, max_iterations=15, parity_fast_path=True))
        slow = iterate_bp(g, BpConfig(mode=mode, max_iterations=15, parity_fast_path=False))
        for (a, _), (b, _) in zip(fast, slow):
            for k in a.factor_to_var:
                np.testing.assert_allclose(a.factor_to_var[k], b.factor_to_var[k], atol=1e-10)


def test_zero_damping_is_undamped():
    g = random_loopy(np.random.default_rng(5))
    a = run_bp(g, BpConfig(max_iterations=30, damping=0.0))
    b = run_bp(g, BpConfig(max_iterations=30))
    for x, y in zip(a.beliefs, b.beliefs):
        np.testing.assert_array_equal(x, y)


def test_damping_keeps_fixed_point():
    g = random_tree(np.random.default_rng(6), 6)
    res = run_bp(g, BpConfig(damping=0.5, max_iterations=500))
    assert res.converged
    for a, b in zip(res.beliefs, exact_marginals(g)):
        np.testing.assert_allclose(a, b, atol=1e-7)


def test_normalization_does_not_change_argmax():
    rng = np.random.default_rng(7)
    for _ in range(5):
        g = random_tree(rng, 7)
        for mode in (SUM, MAX):
            a = run_bp(g, BpConfig(mode=mode, normalize=True))
            b = run_bp(g, BpConfig(mode=mode, normalize=False, max_iterations=a.iterations))
            assert decode_map_from_beliefs(a.beliefs) == decode_map_from_beliefs(beliefs(b.state, g))


def test_config_validation():
    for kw in ({"mode": "x"}, {"max_iterations": 0}, {"tol": 0.0}, {"damping": 1.0}):
        with pytest.raises(ValueError):
            BpConfig(**kw)


def test_non_convergence_is_reported():
    # two sweeps are too few on a loopy graph
    g = random_loopy(np.random.default_rng(8), n=8, extra=6)
    res = run_bp(g, BpConfig(max_iterations=2))
    assert res.iterations == 2 and not res.converged
