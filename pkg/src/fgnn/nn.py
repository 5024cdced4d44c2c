"""Factor Graph Neural Network layers and model on the differentiation tape.

One FGNN layer has a Variable-to-Factor half producing new factor
features and a Factor-to-Variable half producing new variable features.
Both halves read the layer's input features: for every edge (c, i) an MLP
``M`` maps ``[g_c, f_i]`` to a hidden vector, a network ``Q`` maps the edge
feature to a matrix, and the products ``Q @ M`` are aggregated (max, sum or
prod) over the edges of each receiving node.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad

CHECKPOINT_SCHEMA = "fgnn.checkpoint/1"
AGGREGATORS = ("max", "sum", "prod")


@dataclass
class MlpParams:
    """Layer list of (weight (in, out), bias (out,), activation 'relu'|'identity')."""

    layers: list[tuple[np.ndarray, np.ndarray, str]]

    def __post_init__(self):
        for (w0, _, _), (w1, _, _) in zip(self.layers, self.layers[1:]):
            if w0.shape[1] != w1.shape[0]:
                raise ValueError(f"MLP layer dimensions do not chain: {w0.shape} -> {w1.shape}")

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1][0].shape[1]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        """Plain numpy evaluation, off the tape."""
        for w, b, act in self.layers:
            x = x @ w + b
            if act == "relu":
                x = np.maximum(x, 0.0)
        return x


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_mlp(rng: np.random.Generator, dims, final_act: str = "relu") -> MlpParams:
    layers = []
    for j, (a, b) in enumerate(zip(dims, dims[1:])):
        act = final_act if j == len(dims) - 2 else "relu"
        layers.append((glorot(rng, a, b), np.zeros(b), act))
    return MlpParams(layers)


@dataclass
class ModelConfig:
    var_in: int
    fac_in: int
    edge_in: int
    num_states: int = 2
    hidden: int = 64
    num_layers: int = 3
    aggregator: str = "max"
    residual: bool = True
    q_hidden: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.aggregator not in AGGREGATORS:
            raise ValueError(f"unknown aggregator {self.aggregator!r}")


@dataclass
class FgnnModel:
    config: ModelConfig
    params: dict[str, np.ndarray]

    def mlp(self, prefix: str) -> MlpParams:
        n = 0
        while f"{prefix}.{n}.W" in self.params:
            n += 1
        acts = _mlp_acts(self.config, prefix, n)
        return MlpParams([(self.params[f"{prefix}.{j}.W"], self.params[f"{prefix}.{j}.b"], acts[j])
                          for j in range(n)])

    def num_parameters(self) -> int:
        return int(sum(v.size for v in self.params.values()))


# activation of each MLP layer is fixed by architecture, not stored as a parameter
def _mlp_acts(cfg: ModelConfig, prefix: str, n_layers: int) -> list[str]:
    if prefix == "head":
        return ["relu"] * (n_layers - 1) + ["identity"]
    if prefix.endswith(".q_vf") or prefix.endswith(".q_fv"):
        return ["relu"] * (n_layers - 1) + ["identity"]
    return ["relu"] * n_layers


def _mlp_dims(cfg: ModelConfig) -> dict[str, list[int]]:
    h = cfg.hidden
    dims = {"var_embed": [cfg.var_in, h], "fac_embed": [cfg.fac_in, h]}
    for layer in range(cfg.num_layers):
        p = f"layers.{layer}"
        dims[f"{p}.m_vf"] = [2 * h, h]
        dims[f"{p}.q_vf"] = [cfg.edge_in, *cfg.q_hidden, h * h]
        dims[f"{p}.m_fv"] = [2 * h, h]
        dims[f"{p}.q_fv"] = [cfg.edge_in, *cfg.q_hidden, h * h]
    dims["head"] = [h, cfg.num_states]
    return dims


def init_model(cfg: ModelConfig, seed: int = 0) -> FgnnModel:
    """Glorot-uniform weights, zero biases, drawn in a fixed parameter order."""
    rng = np.random.Generator(np.random.PCG64(seed))
    params = {}
    for prefix, dims in _mlp_dims(cfg).items():
        for j, (a, b) in enumerate(zip(dims, dims[1:])):
            params[f"{prefix}.{j}.W"] = glorot(rng, a, b)
            params[f"{prefix}.{j}.b"] = np.zeros(b)
    return FgnnModel(cfg, params)


def zero_model(cfg: ModelConfig) -> FgnnModel:
    m = init_model(cfg)
    return FgnnModel(cfg, {k: np.zeros_like(v) for k, v in m.params.items()})


@dataclass
class GraphBatch:
    """Raw features of one or more factor graphs laid out as a single graph."""

    var_feat: np.ndarray      # (V, var_in)
    fac_feat: np.ndarray      # (C, fac_in)
    edge_types: np.ndarray    # (U, edge_in) distinct edge feature rows
    edge_type: np.ndarray     # (E,) row of edge_types per edge
    edge_var: np.ndarray      # (E,)
    edge_fac: np.ndarray      # (E,)
    labels: np.ndarray | None = None
    var_graph: np.ndarray | None = None

    def __post_init__(self):
        self.var_segs = ad.Segments(self.edge_var, len(self.var_feat))
        self.fac_segs = ad.Segments(self.edge_fac, len(self.fac_feat))

    @property
    def num_vars(self) -> int:
        return len(self.var_feat)

    @property
    def num_facs(self) -> int:
        return len(self.fac_feat)


def param_nodes(model: FgnnModel) -> dict[str, ad.Node]:
    return {k: ad.param(v, name=k) for k, v in model.params.items()}


def _mlp_node(nodes: dict[str, ad.Node], cfg: ModelConfig, prefix: str, x: ad.Node) -> ad.Node:
    n = 0
    while f"{prefix}.{n}.W" in nodes:
        n += 1
    for j, act in enumerate(_mlp_acts(cfg, prefix, n)):
        x = ad.linear(x, nodes[f"{prefix}.{j}.W"], nodes[f"{prefix}.{j}.b"])
        if act == "relu":
            x = ad.relu(x)
    return x


def _q_matrices(nodes, cfg, prefix, batch: GraphBatch, out_dim: int) -> ad.Node:
    q = _mlp_node(nodes, cfg, prefix, ad.const(batch.edge_types))
    h = q.shape[1] // out_dim
    return ad.reshape(q, (len(batch.edge_types), out_dim, h))


def _edge_messages(nodes, cfg: ModelConfig, prefix: str, batch: GraphBatch, f: ad.Node, g: ad.Node) -> ad.Node:
    """M([g_c, f_i]) per edge.

    The first layer's product with the concatenation splits into one product
    per node side, so it is computed per node and then gathered to edges.
    """
    h = g.shape[1]
    w = nodes[f"{prefix}.0.W"]
    x = ad.add(ad.gather(ad.linear(g, ad.row_slice(w, 0, h)), batch.edge_fac),
               ad.gather(ad.linear(f, ad.row_slice(w, h, w.shape[0]), nodes[f"{prefix}.0.b"]), batch.edge_var))
    n = 1
    while f"{prefix}.{n}.W" in nodes:
        n += 1
    acts = _mlp_acts(cfg, prefix, n)
    if acts[0] == "relu":
        x = ad.relu(x)
    for j in range(1, n):
        x = ad.linear(x, nodes[f"{prefix}.{j}.W"], nodes[f"{prefix}.{j}.b"])
        if acts[j] == "relu":
            x = ad.relu(x)
    return x


def vf_module(nodes, cfg: ModelConfig, layer: int, batch: GraphBatch, f: ad.Node, g: ad.Node) -> ad.Node:
    """New factor features: AGG over incident variables of Q(t_ci) M([g_c, f_i])."""
    p = f"layers.{layer}"
    m = _edge_messages(nodes, cfg, f"{p}.m_vf", batch, f, g)
    q = _q_matrices(nodes, cfg, f"{p}.q_vf", batch, g.shape[1])
    return ad.aggregate(ad.typed_matvec(q, batch.edge_type, m), batch.fac_segs, cfg.aggregator)


def fv_module(nodes, cfg: ModelConfig, layer: int, batch: GraphBatch, f: ad.Node, g: ad.Node) -> ad.Node:
    """New variable features: AGG over incident factors of Q(t_ci) M([g_c, f_i])."""
    p = f"layers.{layer}"
    m = _edge_messages(nodes, cfg, f"{p}.m_fv", batch, f, g)
    q = _q_matrices(nodes, cfg, f"{p}.q_fv", batch, f.shape[1])
    return ad.aggregate(ad.typed_matvec(q, batch.edge_type, m), batch.var_segs, cfg.aggregator)


def fgnn_forward(model: FgnnModel, batch: GraphBatch, nodes: dict[str, ad.Node] | None = None):
    """Per-variable logits (V, num_states).  Returns ``(logits, param nodes)``."""
    cfg = model.config
    if batch.var_feat.shape[1] != cfg.var_in or batch.fac_feat.shape[1] != cfg.fac_in \
            or batch.edge_types.shape[1] != cfg.edge_in:
        raise ValueError("batch feature sizes do not match the model configuration")
    nodes = nodes if nodes is not None else param_nodes(model)
    f = _mlp_node(nodes, cfg, "var_embed", ad.const(batch.var_feat))
    g = _mlp_node(nodes, cfg, "fac_embed", ad.const(batch.fac_feat))
    for layer in range(cfg.num_layers):
        g_new = ad.relu(vf_module(nodes, cfg, layer, batch, f, g))
        f_new = ad.relu(fv_module(nodes, cfg, layer, batch, f, g))
        if cfg.residual:
            f, g = ad.add(f, f_new), ad.add(g, g_new)
        else:
            f, g = f_new, g_new
    return _mlp_node(nodes, cfg, "head", f), nodes


def predict(model: FgnnModel, batch: GraphBatch) -> np.ndarray:
    logits, _ = fgnn_forward(model, batch)
    return np.argmax(logits.value, axis=1)


def loss_and_grads(model: FgnnModel, batch: GraphBatch):
    logits, nodes = fgnn_forward(model, batch)
    loss = ad.softmax_cross_entropy(logits, batch.labels)
    return float(loss.value), ad.param_grads(loss, nodes)


# -- optimizer --------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``."""
    t = state.t + 1
    new_params, m_out, v_out = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        m = beta1 * state.m.get(k, np.zeros_like(p)) + (1 - beta1) * g
        v = beta2 * state.v.get(k, np.zeros_like(p)) + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        new_params[k] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        m_out[k], v_out[k] = m, v
    return new_params, AdamState(m_out, v_out, t)


# -- checkpoints ------------------------------------------------------------

def model_to_json(model: FgnnModel) -> str:
    doc = {
        "schema": CHECKPOINT_SCHEMA,
        "config": asdict(model.config),
        "params": {k: {"shape": list(v.shape), "values": [float(x) for x in v.ravel()]}
                   for k, v in model.params.items()},
    }
    return json.dumps(doc, allow_nan=False)


def model_from_json(text: str) -> FgnnModel:
    doc = json.loads(text)
    if doc.get("schema") != CHECKPOINT_SCHEMA:
        raise ValueError(f"unsupported checkpoint schema {doc.get('schema')!r}")
    cfg = ModelConfig(**doc["config"])
    params = {k: np.array(v["values"], dtype=np.float64).reshape(v["shape"]) for k, v in doc["params"].items()}
    want = init_model(cfg).params
    if set(want) != set(params) or any(want[k].shape != params[k].shape for k in want):
        raise ValueError("checkpoint parameters do not match the configured architecture")
    return FgnnModel(cfg, params)
