import json

import numpy as np
import pytest

from fgnn.datasets import SyntheticSpec, gen_synthetic_dataset, gen_synthetic_instance, gen_tree_dataset
from fgnn.nn import ModelConfig, init_model, model_to_json, predict, zero_model
from fgnn.training import (OptimConfig, evaluate_model, feature_sizes, grad_check, instances_batch, maxsum_accuracy,
                           train_map_model)


def config(**kw):
    vi, fi, ei = feature_sizes()
    return ModelConfig(var_in=vi, fac_in=fi, edge_in=ei, **kw)


def test_memorizes_identical_instances():
    inst = gen_synthetic_instance(SyntheticSpec(n=10, kind="D2", window=4, seed=3))
    res = train_map_model([inst] * 4, config(hidden=16, num_layers=2), OptimConfig(lr=1e-2, epochs=200, batch_size=4))
    assert evaluate_model(res.model, [inst]) == 1.0
    assert res.final_loss < res.initial_loss


def test_training_is_deterministic():
    data = gen_synthetic_dataset("D1", 6, seed=1, n=8, window=4, k=2)
    run = lambda: train_map_model(data, config(hidden=8, num_layers=2), OptimConfig(epochs=3, batch_size=4, seed=5))
    a, b = run(), run()
    assert model_to_json(a.model) == model_to_json(b.model)
    assert a.metrics_json() == b.metrics_json()


def test_metrics_shape():
    data = gen_synthetic_dataset("D1", 4, seed=2, n=8, window=4, k=2)
    res = train_map_model(data, config(hidden=8, num_layers=1), OptimConfig(epochs=2, batch_size=3), test=data)
    rows = json.loads(res.metrics_json())
    assert [r["epoch"] for r in rows] == [1, 2]
    assert all(0.0 <= r["eval_accuracy"] <= 1.0 and r["train_loss"] > 0 for r in rows)


def test_zero_model_is_constant_predictor():
    data = gen_synthetic_dataset("D2", 20, seed=4, n=8, window=4)
    labels = np.concatenate([i.labels for i in data])
    # constant state-0 predictor scores the fraction of zero labels
    assert evaluate_model(zero_model(config(hidden=8)), data) == pytest.approx(np.mean(labels == 0))


def test_perfect_predictor_scores_one():
    data = gen_synthetic_dataset("D2", 3, seed=4, n=8, window=4)
    batch = instances_batch(data)
    model = init_model(config(hidden=8), seed=1)
    batch.labels = predict(model, batch)
    assert evaluate_model(model, batch) == 1.0


def test_maxsum_accuracy_on_trees_is_one():
    data = gen_tree_dataset(5, seed=1)
    assert maxsum_accuracy(data) == 1.0


def test_untrained_accuracy_near_chance_on_balanced_labels():
    data = gen_synthetic_dataset("D4", 30, seed=6, n=10)
    labels = np.concatenate([i.labels for i in data])
    accs = [evaluate_model(init_model(config(hidden=16), seed=s), data) for s in range(5)]
    balance = np.mean(labels)
    assert 0.3 < balance < 0.7
    assert 0.25 < np.mean(accs) < 0.75


@pytest.mark.parametrize("aggregator", ["sum", "max", "prod"])
def test_grad_check(aggregator):
    data = gen_synthetic_dataset("D2", 2, seed=8, n=6, window=3)
    model = init_model(config(hidden=5, num_layers=2, aggregator=aggregator), seed=2)
    assert grad_check(model, instances_batch(data), num_coords=60) < 1e-4
