"""Max-of-rank-1 decomposition of log-potentials and decomposed Max-Product.

A log-table ``theta(x_1..x_n)`` is rewritten as
``max_z sum_i phi_i(x_i, z)`` with one auxiliary state ``z`` per joint
assignment.  For ``z`` matching the assignment every ``phi_i`` contributes
``theta/n``; otherwise at least one term is a penalty larger than any score,
so the maximum is attained exactly at the matching ``z``.  The table is first
shifted so its minimum is 1, which keeps the matching terms positive.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bp import MAX, BpConfig, decode_map_from_beliefs, normalize
from .graph import DenseLog, Factor, FactorGraph, MaxDecomp, build_graph

DEFAULT_FLOOR_WIDTH = 50.0


@dataclass(frozen=True, eq=False)
class MaxDecompFactor:
    """``tables[i]`` has shape ``(d_i, Z)``; ``shift`` was added to the source table."""

    tables: tuple[np.ndarray, ...]
    shift: float

    def __init__(self, tables: Sequence[np.ndarray], shift: float):
        ts = []
        for t in tables:
            t = np.array(t, dtype=np.float64)
            if t.ndim != 2:
                raise ValueError("each decomposition table must be a (d, Z) matrix")
            t.setflags(write=False)
            ts.append(t)
        if not ts:
            raise ValueError("empty decomposition")
        if len({t.shape[1] for t in ts}) != 1:
            raise ValueError("decomposition tables disagree on Z")
        object.__setattr__(self, "tables", tuple(ts))
        object.__setattr__(self, "shift", float(shift))

    @property
    def arity(self) -> int:
        return len(self.tables)

    @property
    def z_count(self) -> int:
        return self.tables[0].shape[1]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(t.shape[0] for t in self.tables)


def floor_neg_inf(log_table: np.ndarray, width: float = DEFAULT_FLOOR_WIDTH) -> np.ndarray:
    """Replace ``-inf`` entries by (smallest finite entry - width)."""
    t = np.asarray(log_table, dtype=np.float64)
    finite = np.isfinite(t)
    if finite.all():
        return t
    if not finite.any():
        raise ValueError("log-table has no finite entry")
    if np.any(np.isnan(t)) or np.any(np.isposinf(t)):
        raise ValueError("log-table contains NaN or +inf")
    return np.where(finite, t, t[finite].min() - width)


def decompose_max(log_table: np.ndarray, floor_width: float = DEFAULT_FLOOR_WIDTH) -> MaxDecompFactor:
    t = np.asarray(log_table, dtype=np.float64)
    if t.size == 0 or t.ndim == 0:
        raise ValueError("cannot decompose an empty table")
    t = floor_neg_inf(t, floor_width)
    shift = 1.0 - float(t.min())
    shifted = (t + shift).ravel()
    n = t.ndim
    penalty = -(float(shifted.max()) + 1.0)
    assignments = np.indices(t.shape).reshape(n, -1)  # row i: state of var i under each z
    tables = []
    for i, d in enumerate(t.shape):
        tab = np.full((d, shifted.size), penalty)
        tab[assignments[i], np.arange(shifted.size)] = shifted / n
        tables.append(tab)
    return MaxDecompFactor(tables, shift)


def reconstruct_max(md: MaxDecompFactor) -> np.ndarray:
    """``max_z sum_i tables[i][x_i, z]`` for every assignment (the shifted table)."""
    n = md.arity
    acc = np.zeros(md.shape + (md.z_count,))
    for i, tab in enumerate(md.tables):
        view = [1] * n + [md.z_count]
        view[i] = tab.shape[0]
        acc = acc + tab.reshape(view)
    return acc.max(axis=-1)


def decompose_graph(g: FactorGraph, floor_width: float = DEFAULT_FLOOR_WIDTH) -> FactorGraph:
    """Copy of ``g`` with every non-unary factor replaced by its max-decomposition.

    Unary factors become plain dense log-tables (explicit per-variable terms).
    """
    factors = []
    for f in g.factors:
        table = g.log_table(f.id)
        if len(f.scope) == 1:
            factors.append(Factor(f.id, f.scope, DenseLog(table)))
        else:
            factors.append(Factor(f.id, f.scope, MaxDecomp(decompose_max(table, floor_width))))
    return build_graph(g.variables, factors)


# -- decomposed Max-Product ------------------------------------------------

@dataclass
class DecomposedMessageState:
    to_z: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)       # b_{c->i}(z)
    messages: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)   # m_{c->i}(x_i)
    beliefs: list[np.ndarray] = field(default_factory=list)                     # b_i(x_i)
    iteration: int = 0


@dataclass
class DecomposedResult:
    beliefs: list[np.ndarray]
    decode: tuple[int, ...]
    converged: bool
    iterations: int
    state: DecomposedMessageState


def _decomposed_factors(g: FactorGraph) -> list[Factor]:
    out = []
    for f in g.factors:
        if len(f.scope) == 1:
            continue
        if not isinstance(f.potential, MaxDecomp):
            raise ValueError(f"factor {f.id} is not max-decomposed; use decompose_graph first")
        out.append(f)
    return out


def init_decomposed(g: FactorGraph) -> DecomposedMessageState:
    st = DecomposedMessageState()
    for f in _decomposed_factors(g):
        z = f.potential.factor.z_count
        for i in f.scope:
            st.messages[(f.id, i)] = np.zeros(g.cardinalities[i])
            st.to_z[(f.id, i)] = np.zeros(z)
    st.beliefs = [np.array(t, dtype=np.float64) for t in g.unary_log]
    return st


def factor_to_z(tables: Sequence[np.ndarray], msgs: Sequence[np.ndarray],
                bels: Sequence[np.ndarray]) -> list[np.ndarray]:
    """``b_{c->i}(z) = sum_{j != i} max_x [phi_j(x, z) - m_{c->j}(x) + b_j(x)]`` for every slot i."""
    per_slot = [np.max(tab + (b - m)[:, None], axis=0) for tab, m, b in zip(tables, msgs, bels)]
    out = []
    for i in range(len(tables)):
        acc = np.zeros(tables[0].shape[1])
        for j, u in enumerate(per_slot):
            if j != i:
                acc = acc + u
        out.append(acc)
    return out


def z_to_var(table: np.ndarray, to_z: np.ndarray) -> np.ndarray:
    """``m_{c->i}(x) = max_z [b_{c->i}(z) + phi_i(x, z)]``."""
    return np.max(table + to_z[None, :], axis=1)


def decomposed_mp_step(g: FactorGraph, state: DecomposedMessageState) -> DecomposedMessageState:
    """One synchronous application of the three decomposed updates."""
    new = DecomposedMessageState(iteration=state.iteration + 1)
    for f in _decomposed_factors(g):
        md = f.potential.factor
        msgs = [state.messages[(f.id, j)] for j in f.scope]
        bels = [state.beliefs[j] for j in f.scope]
        for slot, (i, bz) in enumerate(zip(f.scope, factor_to_z(md.tables, msgs, bels))):
            new.to_z[(f.id, i)] = bz
            new.messages[(f.id, i)] = normalize(z_to_var(md.tables[slot], bz), MAX)
    bel = [np.array(t, dtype=np.float64) for t in g.unary_log]
    for (c, i), m in new.messages.items():
        bel[i] = bel[i] + m
    new.beliefs = bel
    return new


def _delta(a: dict, b: dict) -> float:
    d = 0.0
    for k, v in a.items():
        diff = np.abs(v - b[k])
        diff[v == b[k]] = 0.0
        d = max(d, float(np.nan_to_num(diff, nan=np.inf).max()))
    return d


def iterate_decomposed_max_product(g: FactorGraph, config: BpConfig | None = None):
    cfg = config or BpConfig(mode=MAX)
    state = init_decomposed(g)
    for _ in range(cfg.max_iterations):
        new = decomposed_mp_step(g, state)
        delta = _delta(new.messages, state.messages)
        state = new
        yield state, delta


def run_decomposed_max_product(g: FactorGraph, config: BpConfig | None = None) -> DecomposedResult:
    cfg = config or BpConfig(mode=MAX)
    state = init_decomposed(g)
    converged = False
    for state, delta in iterate_decomposed_max_product(g, cfg):
        if delta < cfg.tol:
            converged = True
            break
    bel = [normalize(b, MAX) for b in state.beliefs]
    return DecomposedResult(bel, decode_map_from_beliefs(bel), converged, state.iteration, state)
