import itertools

import numpy as np
import pytest

from fgnn.bp import BpConfig, run_bp
from fgnn.datasets import (SyntheticSpec, dataset_from_json, dataset_to_json, gen_synthetic_dataset,
                           gen_synthetic_instance, gen_tree_dataset, gen_tree_instance, random_binary_tree)
from fgnn.exact import exact_map, exact_marginals, score
from fgnn.graph import BudgetLog, DenseLog, GraphParseError


def brute_force_map(g):
    best, arg = -np.inf, None
    for x in itertools.product(*map(range, g.cardinalities)):
        s = score(g, x)
        if s > best:
            best, arg = s, x
    return arg


def test_d1_counts():
    inst = gen_synthetic_instance(SyntheticSpec(n=14, kind="D1", seed=7))
    kinds = [(len(f.scope), type(f.potential).__name__) for f in inst.graph.factors]
    assert kinds.count((1, "DenseLog")) == 14
    assert kinds.count((2, "DenseLog")) == 13
    assert kinds.count((8, "BudgetLog")) == 7
    assert all(f.potential.k == 5 for f in inst.graph.factors if isinstance(f.potential, BudgetLog))


def test_zero_budget_forces_zeros():
    g = gen_synthetic_instance(SyntheticSpec(n=10, kind="D2", k=0, window=4, seed=1)).graph
    assert exact_map(g).assignment == (0,) * 10


@pytest.mark.parametrize("kind", ["D1", "D2", "D3", "D4"])
def test_labels_revalidate(kind):
    for inst in gen_synthetic_dataset(kind, 3, seed=11, n=10, window=4):
        assert inst.labels == brute_force_map(inst.graph)
        assert inst.kind == kind


def test_d3_random_budgets_and_d4_has_none():
    d3 = gen_synthetic_dataset("D3", 5, seed=3, n=10, window=4)
    ks = {f.potential.k for inst in d3 for f in inst.graph.factors if isinstance(f.potential, BudgetLog)}
    assert len(ks) > 1 and ks <= set(range(1, 5))
    d4 = gen_synthetic_dataset("D4", 2, seed=3, n=10)
    assert not any(isinstance(f.potential, BudgetLog) for inst in d4 for f in inst.graph.factors)


def test_d1_pairwise_table():
    g = gen_synthetic_instance(SyntheticSpec(n=6, kind="D1", window=3, seed=0)).graph
    pair = next(f for f in g.factors if len(f.scope) == 2)
    # table values enter as log-potentials
    np.testing.assert_array_equal(g.log_table(pair.id), [[0.0, 0.1], [0.2, 1.0]])


def test_spec_validation():
    with pytest.raises(ValueError):
        SyntheticSpec(kind="D9")
    with pytest.raises(ValueError):
        SyntheticSpec(n=4, window=5)


def test_tree_sizes_and_structure():
    rng = np.random.default_rng(0)
    for depth in range(0, 6):
        parent = random_binary_tree(depth, rng)
        assert len(parent) <= 2 ** (depth + 1) - 1
        level = [0] * len(parent)
        for c, p in enumerate(parent):
            if p >= 0:
                assert p < c
                level[c] = level[p] + 1
        assert max(level) == depth
        assert max(np.bincount([p for p in parent if p >= 0], minlength=1)) <= 2
    assert len(random_binary_tree(3, rng)) <= 15


def test_trees_exact_under_sum_product():
    for inst in gen_tree_dataset(10, seed=5):
        res = run_bp(inst.graph, BpConfig())
        for a, b in zip(res.beliefs, exact_marginals(inst.graph)):
            np.testing.assert_allclose(a, b, atol=1e-8)


def test_tree_max_nodes_cap():
    inst = gen_tree_instance(4, depth_range=(6, 6), max_nodes=10)
    assert inst.graph.num_variables <= 10


def test_generators_are_deterministic():
    a = dataset_to_json(gen_synthetic_dataset("D3", 4, seed=9, n=8, window=3))
    b = dataset_to_json(gen_synthetic_dataset("D3", 4, seed=9, n=8, window=3))
    assert a == b
    assert dataset_to_json(gen_tree_dataset(3, seed=2)) == dataset_to_json(gen_tree_dataset(3, seed=2))
    assert a != dataset_to_json(gen_synthetic_dataset("D3", 4, seed=10, n=8, window=3))


def test_dataset_json_roundtrip():
    data = gen_synthetic_dataset("D2", 3, seed=4, n=8, window=3)
    text = dataset_to_json(data, {"note": "x"})
    back = dataset_from_json(text)
    assert [i.labels for i in back] == [i.labels for i in data]
    assert dataset_to_json(back, {"note": "x"}) == text


def test_dataset_json_errors():
    with pytest.raises(GraphParseError):
        dataset_from_json("[")
    with pytest.raises(GraphParseError):
        dataset_from_json('{"schema": "nope"}')
    text = dataset_to_json(gen_synthetic_dataset("D2", 1, seed=4, n=6, window=3))
    with pytest.raises(GraphParseError):
        dataset_from_json(text.replace('"labels": [', '"labels": [0, '))
