"""Synthetic MAP-inference datasets: budget-constrained chains and random trees.

All tables here are log-potentials.  Labels are exact MAP assignments from
brute-force enumeration.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .exact import exact_map
from .graph import BudgetLog, DenseLog, Factor, FactorGraph, GraphParseError, build_graph, graph_from_dict, graph_to_dict
from .rng import make_rng

DATASET1_PAIRWISE = np.array([[0.0, 0.1], [0.2, 1.0]])
KINDS = ("D1", "D2", "D3", "D4")


@dataclass(frozen=True)
class SyntheticSpec:
    n: int = 14
    kind: str = "D1"
    k: int | None = None      # None: 5 for D1/D2, random per factor for D3
    window: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if self.kind != "D4" and not 1 <= self.window <= self.n:
            raise ValueError("budget window must fit inside the chain")


@dataclass
class Instance:
    graph: FactorGraph
    labels: tuple[int, ...]
    kind: str = ""


def _pairwise(kind: str, rng: np.random.Generator) -> np.ndarray:
    if kind == "D1":
        return DATASET1_PAIRWISE.copy()
    if kind in ("D2", "D4"):
        return rng.random((2, 2))
    t = np.zeros((2, 2))
    t[1, 1] = rng.uniform(0.0, 2.0)
    return t


def synthetic_graph(spec: SyntheticSpec) -> FactorGraph:
    rng = make_rng(spec.seed)
    n = spec.n
    factors = []
    for i in range(n):
        factors.append(Factor(len(factors), [i], DenseLog(rng.random(2))))
    for i in range(n - 1):
        factors.append(Factor(len(factors), [i, i + 1], DenseLog(_pairwise(spec.kind, rng))))
    if spec.kind != "D4":
        for start in range(n - spec.window + 1):
            if spec.k is not None:
                k = spec.k
            elif spec.kind == "D3":
                k = int(rng.integers(1, spec.window + 1))
            else:
                k = 5
            factors.append(Factor(len(factors), range(start, start + spec.window), BudgetLog(k)))
    return build_graph([2] * n, factors)


def gen_synthetic_instance(spec: SyntheticSpec) -> Instance:
    g = synthetic_graph(spec)
    return Instance(g, exact_map(g).assignment, spec.kind)


def gen_synthetic_dataset(kind: str, size: int, seed: int, n: int = 14, window: int = 8,
                          k: int | None = None) -> list[Instance]:
    """``size`` instances; instance j uses seed derived from ``(seed, j)``."""
    out = []
    for j in range(size):
        sub = int(make_rng(seed, j).integers(2 ** 63))
        out.append(gen_synthetic_instance(SyntheticSpec(n=n, kind=kind, k=k, window=window, seed=sub)))
    return out


def random_binary_tree(depth: int, rng: np.random.Generator, max_nodes: int | None = None) -> list[int]:
    """Parent list (root has -1) of a random binary tree of exactly ``depth`` edge levels.

    A root-to-leaf spine fixes the depth; other children are attached with
    probability 1/2 while the node budget lasts.
    """
    if depth < 0:
        raise ValueError("depth must be non-negative")
    cap = max_nodes if max_nodes is not None else 2 ** (depth + 1) - 1
    if cap < depth + 1:
        raise ValueError(f"{cap} nodes cannot reach depth {depth}")
    parent = [-1]
    level = [0]
    children = [0]
    for d in range(depth):  # spine
        parent.append(len(parent) - 1)
        level.append(d + 1)
        children.append(0)
        children[-2] += 1
    frontier = list(range(len(parent)))
    while frontier:
        node = frontier.pop(0)
        while level[node] < depth and children[node] < 2 and len(parent) < cap:
            if rng.random() >= 0.5:
                break
            parent.append(node)
            level.append(level[node] + 1)
            children.append(0)
            children[node] += 1
            frontier.append(len(parent) - 1)
    return parent


def tree_graph(parent: list[int], rng: np.random.Generator) -> FactorGraph:
    n = len(parent)
    factors = [Factor(i, [i], DenseLog(rng.standard_normal(2))) for i in range(n)]
    for child, par in enumerate(parent):
        if par >= 0:
            factors.append(Factor(len(factors), sorted((par, child)), DenseLog(rng.standard_normal((2, 2)))))
    return build_graph([2] * n, factors)


def gen_tree_instance(seed: int, depth_range: tuple[int, int] = (3, 6), max_nodes: int | None = 20) -> Instance:
    """Random binary tree with N(0, 1) unary and pairwise log-potentials.

    ``max_nodes`` keeps brute-force labelling cheap; ``None`` lifts the cap.
    """
    rng = make_rng(seed)
    depth = int(rng.integers(depth_range[0], depth_range[1] + 1))
    if max_nodes is not None:
        depth = min(depth, max_nodes - 1)
    g = tree_graph(random_binary_tree(depth, rng, max_nodes), rng)
    return Instance(g, exact_map(g).assignment, "tree")


def gen_tree_dataset(size: int, seed: int, depth_range: tuple[int, int] = (3, 6),
                     max_nodes: int | None = 20) -> list[Instance]:
    """``size`` tree instances; instance j uses seed derived from ``(seed, j)``."""
    return [gen_tree_instance(int(make_rng(seed, j).integers(2 ** 63)), depth_range, max_nodes)
            for j in range(size)]


# -- serialization --------------------------------------------------------------

DATASET_SCHEMA = "fgnn.dataset/1"


def dataset_to_json(instances: list[Instance], meta: dict | None = None) -> str:
    doc = {
        "schema": DATASET_SCHEMA,
        "meta": meta or {},
        "instances": [{"kind": inst.kind, "labels": list(inst.labels), "graph": graph_to_dict(inst.graph)}
                      for inst in instances],
    }
    return json.dumps(doc, allow_nan=False)


def dataset_from_json(text: str) -> list[Instance]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphParseError("$", f"invalid JSON: {exc.msg}") from None
    if not isinstance(doc, dict) or doc.get("schema") != DATASET_SCHEMA:
        raise GraphParseError("$.schema", f"expected {DATASET_SCHEMA!r}")
    out = []
    for j, item in enumerate(doc.get("instances", [])):
        g = graph_from_dict(item["graph"])
        labels = tuple(int(x) for x in item["labels"])
        if len(labels) != g.num_variables:
            raise GraphParseError(f"$.instances[{j}].labels", "one label per variable required")
        out.append(Instance(g, labels, str(item.get("kind", ""))))
    return out
