import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fgnn.bp import MAX, BpConfig, decode_map_from_beliefs, iterate_bp, normalize, run_bp
from fgnn.exact import exact_map, map_is_unique
from fgnn.graph import NEG_INF, BudgetLog, DenseLog, Factor, build_graph
from fgnn.maxdecomp import (decompose_graph, decompose_max, decomposed_mp_step, floor_neg_inf, init_decomposed,
                            iterate_decomposed_max_product, reconstruct_max, run_decomposed_max_product)

from helpers import random_loopy, random_tree


def test_constant_table():
    md = decompose_max(np.full((2, 2), 0.3))
    rec = reconstruct_max(md)
    np.testing.assert_array_equal(rec, np.ones((2, 2)))
    # for x = (0, 0) the score over z peaks exactly at the z that encodes (0, 0)
    acc = md.tables[0][0] + md.tables[1][0]
    assert acc[0] == 1.0 and np.all(acc[1:] < 1.0)


def test_small_table_exact():
    md = decompose_max(np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert md.shift == 0.0
    np.testing.assert_array_equal(reconstruct_max(md), [[1.0, 2.0], [3.0, 4.0]])
    assert md.z_count == 4


def test_three_var_table():
    t = np.random.default_rng(0).standard_normal((3, 3, 3))
    md = decompose_max(t)
    assert md.z_count == 27
    np.testing.assert_allclose(reconstruct_max(md) - md.shift, t, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(2, 3), min_size=1, max_size=3), st.integers(0, 2 ** 32 - 1))
def test_reconstruction_and_diagonal(shape, seed):
    t = 3.0 * np.random.default_rng(seed).standard_normal(shape)
    md = decompose_max(t)
    rec = reconstruct_max(md)
    assert rec.min() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(rec, t + md.shift, atol=1e-12)
    n = len(shape)
    diag = [tab.max(axis=0) for tab in md.tables]
    # each z carries shifted/n on its own entries, summing to the shifted value >= 1
    assert all(np.all(n * d >= 1.0 - 1e-12) for d in diag)
    off = [np.sort(np.unique(tab))[0] for tab in md.tables]
    assert all(o == pytest.approx(-(rec.max() + 1.0), abs=1e-12) for o in off)


def test_floor_neg_inf():
    t = np.array([0.0, -2.0, NEG_INF])
    np.testing.assert_array_equal(floor_neg_inf(t, 50.0), [0.0, -2.0, -52.0])
    with pytest.raises(ValueError):
        floor_neg_inf(np.array([NEG_INF, NEG_INF]))


def test_empty_table_rejected():
    with pytest.raises(ValueError):
        decompose_max(np.zeros((0,)))


def test_first_step_by_hand():
    th0, th1 = np.array([0.2, -0.4]), np.array([0.5, 0.1])
    table = np.array([[0.3, 1.2], [-0.7, 0.0]])
    g = decompose_graph(build_graph([2, 2], [Factor(0, [0], DenseLog(th0)), Factor(1, [1], DenseLog(th1)),
                                             Factor(2, [0, 1], DenseLog(table))]))
    md = g.factor(2).potential.factor
    step = decomposed_mp_step(g, init_decomposed(g))
    for slot, (i, j) in enumerate(((0, 1), (1, 0))):
        tab_j = md.tables[1 - slot]
        th_j = (th0, th1)[j]
        want = np.array([max(tab_j[x, z] + th_j[x] for x in range(2)) for z in range(md.z_count)])
        np.testing.assert_allclose(step.to_z[(2, i)], want, atol=1e-15)


def test_constant_decomposition_constant_message():
    g = decompose_graph(build_graph([2, 2], [Factor(0, [0, 1], DenseLog(np.zeros((2, 2))))]))
    step = decomposed_mp_step(g, init_decomposed(g))
    for m in step.messages.values():
        np.testing.assert_array_equal(m, [0.0, 0.0])


def test_messages_match_dense_maxsum():
    rng = np.random.default_rng(1)
    for _ in range(5):
        g = random_loopy(rng, n=5, extra=2, card=int(rng.integers(2, 4)))
        dg = decompose_graph(g)
        shifted = build_graph(g.variables, [Factor(f.id, f.scope, DenseLog(reconstruct_max(f.potential.factor)))
                                            if len(f.scope) > 1 else f for f in dg.factors])
        dense = iterate_bp(shifted, BpConfig(mode=MAX, max_iterations=10))
        dec = iterate_decomposed_max_product(dg, BpConfig(mode=MAX, max_iterations=10))
        for (a, _), (b, _) in zip(dec, dense):
            for k, m in a.messages.items():
                np.testing.assert_allclose(normalize(m, MAX), b.factor_to_var[k], atol=1e-9)


def test_trees_decode_exact():
    rng = np.random.default_rng(2)
    for _ in range(20):
        g = random_tree(rng, int(rng.integers(2, 9)))
        if map_is_unique(g):
            assert run_decomposed_max_product(decompose_graph(g)).decode == exact_map(g).assignment


def test_loopy_decode_matches_dense():
    rng = np.random.default_rng(3)
    for _ in range(30):
        g = random_loopy(rng, n=6, extra=2)
        dense = decode_map_from_beliefs(run_bp(g, BpConfig(mode=MAX)).beliefs)
        assert run_decomposed_max_product(decompose_graph(g)).decode == dense


def test_constant_graph_decodes_zeros():
    g = build_graph([2, 3, 2], [Factor(0, [0, 1], DenseLog(np.ones((2, 3)))), Factor(1, [1, 2], DenseLog(np.zeros((3, 2))))])
    assert run_decomposed_max_product(decompose_graph(g)).decode == (0, 0, 0)


def test_hard_constraints_survive_flooring():
    factors = [Factor(i, [i], DenseLog([0.0, 1.0])) for i in range(3)]
    factors.append(Factor(3, [0, 1, 2], BudgetLog(1)))
    g = build_graph([2] * 3, factors)
    res = run_decomposed_max_product(decompose_graph(g))
    assert sum(res.decode) <= 1


def test_requires_decomposed_factors():
    with pytest.raises(ValueError):
        run_decomposed_max_product(random_loopy(np.random.default_rng(4), n=4, extra=0))
