import itertools
import math

import numpy as np
import pytest

from fgnn.exact import (DegenerateModel, StateSpaceTooLarge, exact_map, exact_marginals, map_is_unique,
                        partition_function, score)
from fgnn.graph import BudgetLog, DenseLog, Factor, ParityLog, build_graph

from helpers import random_loopy


def enumerate_linear(g):
    """Independent oracle: marginals, Z and MAP by looping over assignments in the linear domain."""
    card = g.cardinalities
    marg = [np.zeros(d) for d in card]
    z = 0.0
    best, best_x = -math.inf, None
    for x in itertools.product(*map(range, card)):
        w = 1.0
        s = 0.0
        for f in g.factors:
            v = g.log_table(f.id)[tuple(x[i] for i in f.scope)]
            w *= math.exp(v)
            s += v
        z += w
        for i, xi in enumerate(x):
            marg[i][xi] += w
        if s > best:
            best, best_x = s, x
    return [m / z for m in marg], math.log(z), best_x, best


def pair_graph(table):
    return build_graph([2, 2], [Factor(0, [0, 1], DenseLog(np.log(table)))])


def test_pairwise_marginals_and_logz():
    g = pair_graph([[1.0, 2.0], [3.0, 4.0]])
    m = exact_marginals(g)
    np.testing.assert_allclose(m[0], [0.3, 0.7], atol=1e-12)
    np.testing.assert_allclose(m[1], [0.4, 0.6], atol=1e-12)
    assert partition_function(g) == pytest.approx(math.log(10.0), abs=1e-12)


def test_uniform_single_variable():
    g = build_graph([2], [Factor(0, [0], DenseLog([0.0, 0.0]))])
    np.testing.assert_allclose(exact_marginals(g)[0], [0.5, 0.5], atol=1e-15)
    assert partition_function(g) == pytest.approx(math.log(2.0), abs=1e-15)


def test_dataset1_table_map():
    g = build_graph([2, 2], [Factor(0, [0], DenseLog([0.0, 0.0])), Factor(1, [1], DenseLog([0.0, 0.0])),
                             Factor(2, [0, 1], DenseLog(np.log([[1e-300, 0.1], [0.2, 1.0]])))])
    assert exact_map(g).assignment == (1, 1)


def test_budget_zero_forces_all_zero():
    factors = [Factor(i, [i], DenseLog([0.0, 2.0])) for i in range(3)]
    factors.append(Factor(3, [0, 1, 2], BudgetLog(0)))
    res = exact_map(build_graph([2] * 3, factors))
    assert res.assignment == (0, 0, 0)
    assert res.log_score == 0.0


def test_random_graphs_against_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(5):
        g = random_loopy(rng, n=8, extra=3, card=2)
        marg, logz, x, s = enumerate_linear(g)
        for a, b in zip(exact_marginals(g), marg):
            np.testing.assert_allclose(a, b, atol=1e-10)
        assert partition_function(g) == pytest.approx(logz, abs=1e-10)
        res = exact_map(g)
        assert res.assignment == x
        assert res.log_score == pytest.approx(s, abs=1e-12)
        assert res.log_score == pytest.approx(score(g, res.assignment), abs=1e-12)


def test_map_beats_random_assignments():
    rng = np.random.default_rng(1)
    g = random_loopy(rng, n=10, extra=4)
    best = exact_map(g).log_score
    for _ in range(1000):
        assert score(g, rng.integers(0, 2, size=10)) <= best + 1e-12


def test_disconnected_logz_adds():
    rng = np.random.default_rng(2)
    t1, t2 = rng.standard_normal((2, 2)), rng.standard_normal((3, 2))
    both = build_graph([2, 2, 3, 2], [Factor(0, [0, 1], DenseLog(t1)), Factor(1, [2, 3], DenseLog(t2))])
    a = build_graph([2, 2], [Factor(0, [0, 1], DenseLog(t1))])
    b = build_graph([3, 2], [Factor(0, [0, 1], DenseLog(t2))])
    assert partition_function(both) == pytest.approx(partition_function(a) + partition_function(b), abs=1e-12)


def test_frozen_values():
    # values computed once by hand-enumeration and frozen
    g = build_graph([2, 3], [Factor(0, [0], DenseLog([0.5, -0.5])),
                             Factor(1, [0, 1], DenseLog([[0.0, 1.0, 2.0], [3.0, 0.0, -1.0]]))])
    w = np.exp(np.array([[0.5, 1.5, 2.5], [2.5, -0.5, -1.5]]))
    np.testing.assert_allclose(exact_marginals(g)[1], w.sum(0) / w.sum(), atol=1e-14)
    assert partition_function(g) == pytest.approx(2.5 + math.log(2 + math.exp(-1) + math.exp(-2)
                                                                 + math.exp(-3) + math.exp(-4)), abs=1e-12)
    # tie between (0, 2) and (1, 0) at score 2.5: lexicographic order picks (0, 2)
    assert exact_map(g).assignment == (0, 2)
    assert not map_is_unique(g)


def test_constant_shift_moves_score_only():
    rng = np.random.default_rng(3)
    g = random_loopy(rng, n=6, extra=2)
    base = exact_map(g)
    f = g.factors[-1]
    shifted = build_graph(g.cardinalities, list(g.factors[:-1]) + [
        Factor(f.id, f.scope, DenseLog(g.log_table(f.id) + 1.75))])
    res = exact_map(shifted)
    assert res.assignment == base.assignment
    assert res.log_score == pytest.approx(base.log_score + 1.75, abs=1e-12)


def test_errors():
    g = build_graph([2] * 3, [Factor(0, [0, 1, 2], ParityLog()), Factor(1, [0], DenseLog([-math.inf, 0.0])),
                              Factor(2, [1], DenseLog([-math.inf, 0.0])), Factor(3, [2], DenseLog([-math.inf, 0.0]))])
    with pytest.raises(DegenerateModel):
        exact_marginals(g)
    with pytest.raises(DegenerateModel):
        exact_map(g)
    with pytest.raises(StateSpaceTooLarge):
        exact_marginals(build_graph([2] * 5, []), cap=16)
