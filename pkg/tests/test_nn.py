import numpy as np
import pytest

from fgnn import autodiff as ad
from fgnn.datasets import gen_synthetic_dataset
from fgnn.graph import DenseLog, Factor, build_graph
from fgnn.nn import (AdamState, GraphBatch, ModelConfig, adam_step, fgnn_forward, fv_module, init_model,
                     model_from_json, model_to_json, param_nodes, predict, vf_module, zero_model)
from fgnn.training import feature_sizes, featurize, instances_batch

from helpers import random_loopy


def small_batch(seed=0):
    return instances_batch(gen_synthetic_dataset("D2", 2, seed, n=6, window=3))


def config(**kw):
    vi, fi, ei = feature_sizes()
    return ModelConfig(var_in=vi, fac_in=fi, edge_in=ei, hidden=kw.pop("hidden", 6), num_layers=kw.pop("layers", 2),
                       **kw)


def pass_through_nodes(cfg, batch, prefix):
    """M copies f_i (or g_c) unchanged, Q is the identity for every edge type."""
    h = cfg.hidden
    w = np.zeros((2 * h, h))
    if prefix.endswith("m_vf"):
        w[h:] = np.eye(h)
    else:
        w[:h] = np.eye(h)
    q = prefix.replace("m_", "q_")
    return {f"{prefix}.0.W": ad.const(w), f"{prefix}.0.b": ad.const(np.zeros(h)),
            f"{q}.0.W": ad.const(np.zeros((batch.edge_types.shape[1], h * h))),
            f"{q}.0.b": ad.const(np.eye(h).ravel())}


def test_vf_identity_gives_neighbor_max():
    batch = small_batch()
    cfg = config(hidden=4)
    rng = np.random.default_rng(0)
    f, g = rng.random((batch.num_vars, 4)), rng.random((batch.num_facs, 4))
    out = vf_module(pass_through_nodes(cfg, batch, "layers.0.m_vf"), cfg, 0, batch, ad.const(f), ad.const(g)).value
    for c in range(batch.num_facs):
        np.testing.assert_array_equal(out[c], f[batch.edge_var[batch.edge_fac == c]].max(axis=0))
    out = fv_module(pass_through_nodes(cfg, batch, "layers.0.m_fv"), cfg, 0, batch, ad.const(f), ad.const(g)).value
    for i in range(batch.num_vars):
        np.testing.assert_array_equal(out[i], g[batch.edge_fac[batch.edge_var == i]].max(axis=0))


def reference_module(model, layer, batch, f, g, direction):
    """Straight-line per-edge evaluation written without the tape."""
    cfg = model.config
    h = cfg.hidden
    m_net = model.mlp(f"layers.{layer}.m_{direction}")
    q_net = model.mlp(f"layers.{layer}.q_{direction}")
    n_out = batch.num_facs if direction == "vf" else batch.num_vars
    rows = [[] for _ in range(n_out)]
    for e in range(len(batch.edge_var)):
        i, c = batch.edge_var[e], batch.edge_fac[e]
        msg = m_net(np.concatenate([g[c], f[i]])[None])[0]
        q = q_net(batch.edge_types[batch.edge_type[e]][None])[0].reshape(h, h)
        rows[c if direction == "vf" else i].append(q @ msg)
    agg = {"max": np.max, "sum": np.sum, "prod": np.prod}[cfg.aggregator]
    return np.array([agg(r, axis=0) if r else (np.ones(h) if cfg.aggregator == "prod" else np.zeros(h))
                     for r in rows])


@pytest.mark.parametrize("aggregator", ["max", "sum", "prod"])
def test_modules_match_reference(aggregator):
    batch = small_batch(1)
    cfg = config(aggregator=aggregator)
    model = init_model(cfg, seed=3)
    rng = np.random.default_rng(1)
    f, g = rng.standard_normal((batch.num_vars, 6)), rng.standard_normal((batch.num_facs, 6))
    nodes = param_nodes(model)
    vf = vf_module(nodes, cfg, 1, batch, ad.const(f), ad.const(g)).value
    fv = fv_module(nodes, cfg, 1, batch, ad.const(f), ad.const(g)).value
    np.testing.assert_allclose(vf, reference_module(model, 1, batch, f, g, "vf"), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(fv, reference_module(model, 1, batch, f, g, "fv"), rtol=1e-12, atol=1e-12)


def test_zero_model_ties_to_state_zero():
    batch = small_batch()
    logits, _ = fgnn_forward(zero_model(config()), batch)
    assert np.all(logits.value == logits.value[0, 0])
    assert not predict(zero_model(config()), batch).any()


def test_single_variable_graph():
    g = build_graph([2], [Factor(0, [0], DenseLog([0.3, -0.2]))])
    feats = featurize(g)
    batch = GraphBatch(feats["var"], feats["fac"], feats["types"], feats["type"], feats["edge_var"],
                       feats["edge_fac"])
    model = init_model(config(layers=1), seed=2)
    logits, _ = fgnn_forward(model, batch)
    want = model.mlp("head")(model.mlp("var_embed")(feats["var"]))
    np.testing.assert_allclose(logits.value, want, atol=1e-14)


def test_forward_is_reproducible():
    batch = small_batch()
    a = fgnn_forward(init_model(config(), seed=5), batch)[0].value
    b = fgnn_forward(init_model(config(), seed=5), batch)[0].value
    assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("aggregator", ["max", "sum", "prod"])
def test_permutation_equivariance(aggregator):
    batch = small_batch(2)
    rng = np.random.default_rng(2)
    pv, pf = rng.permutation(batch.num_vars), rng.permutation(batch.num_facs)
    inv_v, inv_f = np.argsort(pv), np.argsort(pf)
    pe = rng.permutation(len(batch.edge_var))
    permuted = GraphBatch(batch.var_feat[pv], batch.fac_feat[pf], batch.edge_types, batch.edge_type[pe],
                          inv_v[batch.edge_var[pe]], inv_f[batch.edge_fac[pe]])
    model = init_model(config(aggregator=aggregator), seed=1)
    a = fgnn_forward(model, batch)[0].value
    b = fgnn_forward(model, permuted)[0].value
    np.testing.assert_allclose(b, a[pv], rtol=1e-10, atol=1e-12)


def test_featurize_layout():
    # unary factors fold into variable features; only higher-order factors get edges
    g = random_loopy(np.random.default_rng(3), n=5, extra=1)
    feats = featurize(g)
    assert feats["var"].shape == (5, 4)
    assert len(feats["edge_var"]) == g.num_edges - g.num_variables


def test_adam_examples():
    p = {"w": np.array([1.0, -2.0])}
    new, st = adam_step(p, {"w": np.zeros(2)}, AdamState(), lr=0.1)
    np.testing.assert_array_equal(new["w"], p["w"])
    new, st = adam_step(p, {"w": np.array([3.0, -0.5])}, AdamState(), lr=0.01)
    np.testing.assert_allclose(np.abs(new["w"] - p["w"]), [0.01, 0.01], rtol=1e-6)
    assert st.t == 1


def test_adam_trajectories_identical():
    def run():
        rng = np.random.default_rng(4)
        p, st = {"w": rng.standard_normal(3)}, AdamState()
        for _ in range(20):
            p, st = adam_step(p, {"w": 2 * p["w"] + rng.standard_normal(3)}, st, lr=0.05)
        return p["w"]
    assert run().tobytes() == run().tobytes()


def test_checkpoint_roundtrip():
    model = init_model(config(aggregator="prod"), seed=7)
    back = model_from_json(model_to_json(model))
    assert back.config == model.config
    for k, v in model.params.items():
        assert back.params[k].tobytes() == v.tobytes()
    with pytest.raises(ValueError):
        model_from_json('{"schema": "other"}')


def test_feature_size_mismatch():
    with pytest.raises(ValueError):
        fgnn_forward(init_model(ModelConfig(var_in=3, fac_in=8, edge_in=11)), small_batch())
    with pytest.raises(ValueError):
        config(aggregator="mean")
