"""Bipartite factor-graph model with typed potentials.

Dense potentials are kept as log-tables (``-inf`` marks a forbidden
configuration).  CP potentials stay in the positive domain because the
rank decomposition applies to the potential itself, not its logarithm.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence, Union

import numpy as np

from .tensor import CPTensor, as_dense, densify

NEG_INF = -math.inf

SCHEMA_TAG = "fgnn.factor_graph/1"


class GraphError(ValueError):
    """Invalid graph structure or potential."""


class GraphParseError(ValueError):
    """Malformed factor-graph JSON; ``path`` locates the offending element."""

    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


class PotentialDomainError(ValueError):
    """A potential cannot be expressed in the requested domain."""


@dataclass(frozen=True, eq=False)
class DenseLog:
    table: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "table", as_dense(self.table))


@dataclass(frozen=True, eq=False)
class CP:
    tensor: CPTensor


@dataclass(frozen=True, eq=False)
class MaxDecomp:
    factor: "MaxDecompFactor"  # noqa: F821  (defined in fgnn.maxdecomp)


@dataclass(frozen=True)
class BudgetLog:
    """At most ``k`` variables of the scope may take state 1."""

    k: int


@dataclass(frozen=True)
class ParityLog:
    """The scope must contain an even number of ones."""


Potential = Union[DenseLog, CP, MaxDecomp, BudgetLog, ParityLog]


@dataclass(frozen=True)
class Variable:
    id: int
    cardinality: int


@dataclass(frozen=True, eq=False)
class Factor:
    id: int
    scope: tuple[int, ...]
    potential: Potential

    def __init__(self, id: int, scope: Sequence[int], potential: Potential):
        object.__setattr__(self, "id", int(id))
        object.__setattr__(self, "scope", tuple(int(v) for v in scope))
        object.__setattr__(self, "potential", potential)


def _potential_shape(pot: Potential) -> tuple[int, ...] | None:
    if isinstance(pot, DenseLog):
        return pot.table.shape
    if isinstance(pot, CP):
        return pot.tensor.shape
    if isinstance(pot, MaxDecomp):
        return tuple(t.shape[0] for t in pot.factor.tables)
    return None


@dataclass(frozen=True, eq=False)
class FactorGraph:
    """Validated, immutable factor graph.  Build with :func:`build_graph`."""

    variables: tuple[Variable, ...]
    factors: tuple[Factor, ...]
    var_factors: tuple[tuple[int, ...], ...] = field(repr=False)

    @property
    def num_variables(self) -> int:
        return len(self.variables)

    @property
    def cardinalities(self) -> tuple[int, ...]:
        return tuple(v.cardinality for v in self.variables)

    @cached_property
    def factor_by_id(self) -> dict[int, Factor]:
        return {f.id: f for f in self.factors}

    def factor(self, fid: int) -> Factor:
        return self.factor_by_id[fid]

    @property
    def edges(self) -> list[tuple[int, int]]:
        """(variable, factor id) pairs in factor order then scope order."""
        return [(i, f.id) for f in self.factors for i in f.scope]

    @property
    def num_edges(self) -> int:
        return sum(len(f.scope) for f in self.factors)

    def log_table(self, fid: int) -> np.ndarray:
        """Cached :func:`materialize_log_table` for factor ``fid``."""
        cache = self.__dict__.setdefault("_log_tables", {})
        if fid not in cache:
            cache[fid] = materialize_log_table(self.factor(fid))
        return cache[fid]

    @cached_property
    def unary_log(self) -> tuple[np.ndarray, ...]:
        """Per-variable sum of log-tables of all scope-1 factors."""
        theta = [np.zeros(v.cardinality) for v in self.variables]
        for f in self.factors:
            if len(f.scope) == 1:
                theta[f.scope[0]] = theta[f.scope[0]] + self.log_table(f.id)
        for t in theta:
            t.setflags(write=False)
        return tuple(theta)


def build_graph(variables, factors: Sequence[Factor]) -> FactorGraph:
    """Validate variables and factors and derive the adjacency.

    ``variables`` is a sequence of :class:`Variable` or of plain
    cardinalities (ids then follow position).
    """
    vars_ = []
    for pos, v in enumerate(variables):
        if not isinstance(v, Variable):
            v = Variable(pos, int(v))
        vars_.append(v)
    if not vars_:
        raise GraphError("graph must have at least one variable")
    ids = sorted(v.id for v in vars_)
    if ids != list(range(len(vars_))):
        raise GraphError(f"variable ids must be unique and dense 0..{len(vars_) - 1}, got {ids}")
    vars_.sort(key=lambda v: v.id)
    for v in vars_:
        if v.cardinality < 2:
            raise GraphError(f"variable {v.id} has cardinality {v.cardinality} < 2")
    card = [v.cardinality for v in vars_]

    seen = set()
    adj: list[list[int]] = [[] for _ in vars_]
    for f in factors:
        name = f"factor {f.id}"
        if f.id in seen:
            raise GraphError(f"duplicate factor id {f.id}")
        seen.add(f.id)
        if not f.scope:
            raise GraphError(f"{name}: empty scope")
        if any(b <= a for a, b in zip(f.scope, f.scope[1:])):
            raise GraphError(f"{name}: scope {list(f.scope)} is not strictly ascending")
        if f.scope[0] < 0 or f.scope[-1] >= len(vars_):
            raise GraphError(f"{name}: scope {list(f.scope)} references unknown variables")
        want = tuple(card[i] for i in f.scope)
        pot = f.potential
        shape = _potential_shape(pot)
        if shape is not None and shape != want:
            raise GraphError(f"{name}: potential shape {shape} does not match scope cardinalities {want}")
        if isinstance(pot, (BudgetLog, ParityLog)) and any(c != 2 for c in want):
            raise GraphError(f"{name}: budget/parity potentials need an all-binary scope")
        if not isinstance(pot, (DenseLog, CP, MaxDecomp, BudgetLog, ParityLog)):
            raise GraphError(f"{name}: unsupported potential {type(pot).__name__}")
        for i in f.scope:
            adj[i].append(f.id)
    return FactorGraph(tuple(vars_), tuple(factors), tuple(tuple(a) for a in adj))


def _count_ones(n: int) -> np.ndarray:
    grids = np.indices((2,) * n)
    return grids.sum(axis=0)


def materialize_log_table(f: Factor) -> np.ndarray:
    """Dense log-potential table of a factor, ``-inf`` where forbidden."""
    pot = f.potential
    n = len(f.scope)
    if isinstance(pot, DenseLog):
        return pot.table
    if isinstance(pot, CP):
        dense = densify(pot.tensor)
        if np.any(dense <= 0):
            raise PotentialDomainError(
                f"factor {f.id}: CP potential has non-positive entries, no log form")
        return as_dense(np.log(dense))
    if isinstance(pot, MaxDecomp):
        from .maxdecomp import reconstruct_max

        return as_dense(reconstruct_max(pot.factor) - pot.factor.shift)
    if isinstance(pot, BudgetLog):
        return as_dense(np.where(_count_ones(n) <= pot.k, 0.0, NEG_INF))
    if isinstance(pot, ParityLog):
        return as_dense(np.where(_count_ones(n) % 2 == 0, 0.0, NEG_INF))
    raise GraphError(f"factor {f.id}: unsupported potential {type(pot).__name__}")


# -- JSON ---------------------------------------------------------------------

def _enc(x: float):
    if x == NEG_INF:
        return "-inf"
    if not math.isfinite(x):
        raise ValueError(f"cannot serialize {x}")
    return float(x)


def _encode_potential(pot: Potential) -> dict:
    if isinstance(pot, DenseLog):
        return {"kind": "dense_log", "shape": list(pot.table.shape),
                "values": [_enc(x) for x in pot.table.ravel()]}
    if isinstance(pot, CP):
        return {"kind": "cp", "matrices": [[[_enc(x) for x in row] for row in m]
                                           for m in pot.tensor.matrices]}
    if isinstance(pot, BudgetLog):
        return {"kind": "budget", "k": int(pot.k)}
    if isinstance(pot, ParityLog):
        return {"kind": "parity"}
    if isinstance(pot, MaxDecomp):
        md = pot.factor
        return {"kind": "max_decomp", "shift": _enc(md.shift),
                "tables": [[[_enc(x) for x in row] for row in t] for t in md.tables]}
    raise GraphError(f"unsupported potential {type(pot).__name__}")


def graph_to_dict(g: FactorGraph) -> dict:
    return {
        "schema": SCHEMA_TAG,
        "variables": [{"id": v.id, "cardinality": v.cardinality} for v in g.variables],
        "factors": [{"id": f.id, "scope": list(f.scope), "potential": _encode_potential(f.potential)}
                    for f in g.factors],
    }


def graph_to_json(g: FactorGraph, indent: int | None = None) -> str:
    return json.dumps(graph_to_dict(g), indent=indent, allow_nan=False)


def _num(x, path):
    if x == "-inf":
        return NEG_INF
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise GraphParseError(path, f"expected a number, got {x!r}")
    return float(x)


def _int(x, path):
    if isinstance(x, bool) or not isinstance(x, int):
        raise GraphParseError(path, f"expected an integer, got {x!r}")
    return x


def _list(x, path):
    if not isinstance(x, list):
        raise GraphParseError(path, f"expected a list, got {type(x).__name__}")
    return x


def _matrix(x, path):
    rows = _list(x, path)
    return [[_num(v, f"{path}[{r}][{c}]") for c, v in enumerate(_list(row, f"{path}[{r}]"))]
            for r, row in enumerate(rows)]


def _decode_potential(d, path):
    if not isinstance(d, dict):
        raise GraphParseError(path, "expected an object")
    kind = d.get("kind")
    try:
        if kind == "dense_log":
            shape = [_int(s, f"{path}.shape[{j}]") for j, s in enumerate(_list(d.get("shape"), f"{path}.shape"))]
            values = [_num(v, f"{path}.values[{j}]") for j, v in enumerate(_list(d.get("values"), f"{path}.values"))]
            return DenseLog(as_dense(values, shape))
        if kind == "cp":
            mats = _list(d.get("matrices"), f"{path}.matrices")
            return CP(CPTensor([_matrix(m, f"{path}.matrices[{j}]") for j, m in enumerate(mats)]))
        if kind == "budget":
            return BudgetLog(_int(d.get("k"), f"{path}.k"))
        if kind == "parity":
            return ParityLog()
        if kind == "max_decomp":
            from .maxdecomp import MaxDecompFactor

            tables = _list(d.get("tables"), f"{path}.tables")
            return MaxDecomp(MaxDecompFactor(
                tables=[np.array(_matrix(t, f"{path}.tables[{j}]")) for j, t in enumerate(tables)],
                shift=_num(d.get("shift"), f"{path}.shift")))
    except GraphParseError:
        raise
    except ValueError as exc:
        raise GraphParseError(path, str(exc)) from exc
    raise GraphParseError(f"{path}.kind", f"unknown potential kind {kind!r}")


def graph_from_dict(doc) -> FactorGraph:
    if not isinstance(doc, dict):
        raise GraphParseError("$", "expected a JSON object")
    variables = []
    for j, v in enumerate(_list(doc.get("variables"), "$.variables")):
        p = f"$.variables[{j}]"
        if not isinstance(v, dict):
            raise GraphParseError(p, "expected an object")
        variables.append(Variable(_int(v.get("id"), p + ".id"), _int(v.get("cardinality"), p + ".cardinality")))
    if not variables:
        raise GraphParseError("$.variables", "graph must have at least one variable")
    factors = []
    for j, f in enumerate(_list(doc.get("factors", []), "$.factors")):
        p = f"$.factors[{j}]"
        if not isinstance(f, dict):
            raise GraphParseError(p, "expected an object")
        scope = [_int(s, f"{p}.scope[{k}]") for k, s in enumerate(_list(f.get("scope"), p + ".scope"))]
        factors.append(Factor(_int(f.get("id"), p + ".id"), scope,
                              _decode_potential(f.get("potential"), p + ".potential")))
    try:
        return build_graph(variables, factors)
    except GraphError as exc:
        raise GraphParseError("$", str(exc)) from exc


def graph_from_json(text: str) -> FactorGraph:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphParseError("$", f"invalid JSON: {exc}") from exc
    return graph_from_dict(doc)
