"""Featurization, training and evaluation of FGNN MAP predictors."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .bp import MAX, BpConfig, decode_map_from_beliefs, run_bp
from .datasets import Instance
from .graph import BudgetLog, DenseLog, FactorGraph, ParityLog
from .nn import AdamState, FgnnModel, GraphBatch, ModelConfig, adam_step, fgnn_forward, init_model, loss_and_grads
from .rng import make_rng

MAX_ARITY = 8
KIND_TAGS = ("dense", "budget", "parity")
THETA_FLOOR = -10.0


def feature_sizes(num_states: int = 2, max_arity: int = MAX_ARITY) -> tuple[int, int, int]:
    """(variable, factor, edge) raw feature lengths produced by :func:`featurize`."""
    return 2 * num_states, len(KIND_TAGS) + 1 + num_states ** 2, max_arity + len(KIND_TAGS)


def _kind(pot) -> int:
    if isinstance(pot, BudgetLog):
        return 1
    if isinstance(pot, ParityLog):
        return 2
    return 0


def featurize(g: FactorGraph, num_states: int = 2, max_arity: int = MAX_ARITY) -> dict:
    """Raw node/factor/edge features of one graph.

    Scope-1 factors become variable features (their log-potentials and
    potentials); higher-order factors become FGNN factor nodes with a kind
    tag, the budget fraction ``k / arity`` and, for pairwise dense factors,
    the potential table.  Edge features are the one-hot slot of the variable
    in the factor scope followed by the factor's kind tag.
    """
    d = num_states
    var = np.zeros((g.num_variables, 2 * d))
    for i, theta in enumerate(g.unary_log):
        t = np.maximum(theta, THETA_FLOOR)
        var[i, :len(t)] = t
        var[i, d:d + len(t)] = np.exp(t)
    facs = [f for f in g.factors if len(f.scope) > 1]
    fac = np.zeros((len(facs), len(KIND_TAGS) + 1 + d * d))
    edge_var, edge_fac, edge_feat = [], [], []
    for c, f in enumerate(facs):
        if len(f.scope) > max_arity:
            raise ValueError(f"factor {f.id} arity {len(f.scope)} exceeds max_arity {max_arity}")
        kind = _kind(f.potential)
        fac[c, kind] = 1.0
        if isinstance(f.potential, BudgetLog):
            fac[c, len(KIND_TAGS)] = f.potential.k / len(f.scope)
        elif kind == 0 and len(f.scope) == 2 and g.log_table(f.id).size <= d * d:
            table = np.exp(np.maximum(g.log_table(f.id), THETA_FLOOR)).ravel()
            fac[c, len(KIND_TAGS) + 1:len(KIND_TAGS) + 1 + table.size] = table
        for slot, i in enumerate(f.scope):
            t = np.zeros(max_arity + len(KIND_TAGS))
            t[slot] = 1.0
            t[max_arity + kind] = 1.0
            edge_var.append(i)
            edge_fac.append(c)
            edge_feat.append(t)
    edge_feat = np.array(edge_feat).reshape(-1, max_arity + len(KIND_TAGS))
    types, inverse = np.unique(edge_feat, axis=0, return_inverse=True)
    return {"var": var, "fac": fac, "edge": edge_feat, "types": types, "type": inverse.reshape(-1),
            "edge_var": np.array(edge_var, dtype=np.int64), "edge_fac": np.array(edge_fac, dtype=np.int64)}


def collate(feats: list[dict], labels: list | None = None) -> GraphBatch:
    """Lay several featurized graphs out as one disjoint graph."""
    var_off = np.cumsum([0] + [len(f["var"]) for f in feats])
    fac_off = np.cumsum([0] + [len(f["fac"]) for f in feats])
    table: dict[bytes, int] = {}
    rows, edge_type = [], []
    for f in feats:
        ids = np.empty(len(f["types"]), dtype=np.int64)
        for u, row in enumerate(f["types"]):
            key = row.tobytes()
            if key not in table:
                table[key] = len(rows)
                rows.append(row)
            ids[u] = table[key]
        edge_type.append(ids[f["type"]])
    width = feats[0]["edge"].shape[1] if feats else 0
    return GraphBatch(
        var_feat=np.concatenate([f["var"] for f in feats]),
        fac_feat=np.concatenate([f["fac"] for f in feats]),
        edge_types=np.array(rows).reshape(-1, width),
        edge_type=np.concatenate(edge_type).astype(np.int64),
        edge_var=np.concatenate([f["edge_var"] + var_off[j] for j, f in enumerate(feats)]),
        edge_fac=np.concatenate([f["edge_fac"] + fac_off[j] for j, f in enumerate(feats)]),
        labels=None if labels is None else np.concatenate([np.asarray(l, dtype=np.int64) for l in labels]),
        var_graph=np.concatenate([np.full(len(f["var"]), j) for j, f in enumerate(feats)]),
    )


def instances_batch(instances: list[Instance]) -> GraphBatch:
    return collate([featurize(inst.graph) for inst in instances], [inst.labels for inst in instances])


@dataclass
class OptimConfig:
    lr: float = 3e-3
    lr_decay: float = 0.98
    epochs: int = 100
    batch_size: int = 100
    seed: int = 0


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    eval_accuracy: float | None


@dataclass
class TrainResult:
    model: FgnnModel
    metrics: list[EpochMetrics] = field(default_factory=list)
    initial_loss: float = float("nan")
    final_loss: float = float("nan")

    def metrics_json(self) -> str:
        return json.dumps([{"epoch": m.epoch, "train_loss": m.train_loss, "eval_accuracy": m.eval_accuracy}
                           for m in self.metrics], allow_nan=False)


def dataset_loss(model: FgnnModel, batch: GraphBatch) -> float:
    logits, _ = fgnn_forward(model, batch)
    return float(ad.softmax_cross_entropy(logits, batch.labels).value)


def evaluate_model(model: FgnnModel, data) -> float:
    """Fraction of variables whose predicted state matches the exact-MAP label."""
    batch = data if isinstance(data, GraphBatch) else instances_batch(data)
    logits, _ = fgnn_forward(model, batch)
    return float(np.mean(np.argmax(logits.value, axis=1) == batch.labels))


def train_map_model(train: list[Instance], model_config: ModelConfig | None = None,
                    optim: OptimConfig | None = None, test: list[Instance] | None = None,
                    model: FgnnModel | None = None, log=None) -> TrainResult:
    """Minimize mean per-variable cross-entropy against exact-MAP labels with Adam.

    The learning rate is multiplied by ``lr_decay`` after every epoch.  An
    epoch's ``train_loss`` is the variable-weighted mean of its minibatch
    losses; ``initial_loss`` and ``final_loss`` are full-training-set losses
    before the first and after the last step.
    """
    opt = optim or OptimConfig()
    feats = [featurize(inst.graph) for inst in train]
    labels = [inst.labels for inst in train]
    if model is None:
        vi, fi, ei = feature_sizes()
        cfg = model_config or ModelConfig(var_in=vi, fac_in=fi, edge_in=ei)
        model = init_model(cfg, seed=opt.seed)
    test_batch = instances_batch(test) if test else None
    result = TrainResult(model, initial_loss=dataset_loss(model, collate(feats, labels)))
    rng = make_rng(opt.seed, 1)
    state = AdamState()
    lr = opt.lr
    params = dict(model.params)
    for epoch in range(1, opt.epochs + 1):
        order = rng.permutation(len(train))
        total = count = 0.0
        for start in range(0, len(order), opt.batch_size):
            idx = sorted(int(j) for j in order[start:start + opt.batch_size])
            batch = collate([feats[j] for j in idx], [labels[j] for j in idx])
            loss, grads = loss_and_grads(FgnnModel(model.config, params), batch)
            params, state = adam_step(params, grads, state, lr)
            total += loss * batch.num_vars
            count += batch.num_vars
        lr *= opt.lr_decay
        model = FgnnModel(model.config, params)
        m = EpochMetrics(epoch, total / count,
                         evaluate_model(model, test_batch) if test_batch is not None else None)
        result.metrics.append(m)
        if log:
            log(m)
    result.model = model
    result.final_loss = dataset_loss(model, collate(feats, labels))
    return result


def maxsum_accuracy(instances: list[Instance], config: BpConfig | None = None) -> float:
    """Per-variable MAP agreement of dense Max-Sum BP decoding."""
    cfg = config or BpConfig(mode=MAX)
    hit = total = 0
    for inst in instances:
        dec = decode_map_from_beliefs(run_bp(inst.graph, cfg).beliefs)
        hit += sum(a == b for a, b in zip(dec, inst.labels))
        total += len(inst.labels)
    return hit / total


def grad_check(model: FgnnModel, batch: GraphBatch, epsilon: float = 1e-5, num_coords: int | None = 200,
               seed: int = 0, precision=np.longdouble) -> float:
    """Max relative error between backward and central-difference gradients.

    Checks ``num_coords`` seeded random parameter coordinates (all of them
    when None).  Relative error is ``|a - n| / max(1e-8, |a| + |n|)``.

    The perturbed losses are evaluated in ``precision``.  Extended precision
    keeps the rounding noise of the difference quotient (about
    ``eps_machine * loss / epsilon``) well below gradients near 1e-10, which
    product aggregation produces routinely.
    """
    if isinstance(batch, Instance):
        batch = instances_batch([batch])
    _, grads = loss_and_grads(model, batch)
    coords = [(k, j) for k in sorted(model.params) for j in range(model.params[k].size)]
    if num_coords is not None and num_coords < len(coords):
        rng = make_rng(seed)
        pick = rng.choice(len(coords), size=num_coords, replace=False)
        coords = [coords[p] for p in sorted(pick)]
    wide = {k: v.astype(precision) for k, v in model.params.items()}
    worst = 0.0
    for k, j in coords:
        vals = []
        for sign in (1, -1):
            p = wide[k].copy()
            p.flat[j] += sign * precision(epsilon)
            vals.append(_wide_loss(FgnnModel(model.config, {**wide, k: p}), batch))
        numeric = float((vals[0] - vals[1]) / (2 * precision(epsilon)))
        analytic = float(grads[k].flat[j])
        worst = max(worst, abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric)))
    return worst


def _wide_loss(model: FgnnModel, batch: GraphBatch):
    logits, _ = fgnn_forward(model, batch)
    return ad.softmax_cross_entropy(logits, batch.labels).value
