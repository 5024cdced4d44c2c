"""Dense-table loopy belief propagation: Sum-Product and Max-Sum.

Schedule is synchronous flooding.  One iteration first recomputes every
variable-to-factor message from the previous factor-to-variable messages,
then every factor-to-variable message from those new variable messages.

Conventions
-----------
* ``sum_product`` works in the linear domain; messages are normalized to sum
  to one.  Unary potentials are ordinary scope-1 factors.
* ``max_sum`` works in the log domain; messages are shifted so their maximum
  is 0.  Scope-1 factors are folded into explicit per-variable terms
  ``theta_i`` and take no part in message passing.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from .graph import FactorGraph, ParityLog

SUM = "sum_product"
MAX = "max_sum"

# maps incoming messages (scope order) to all unnormalized outgoing messages
Updater = Callable[[Sequence[np.ndarray]], list]


@dataclass(frozen=True)
class BpConfig:
    mode: str = SUM
    max_iterations: int = 100
    tol: float = 1e-9
    damping: float = 0.0
    normalize: bool = True
    parity_fast_path: bool = True

    def __post_init__(self):
        if self.mode not in (SUM, MAX):
            raise ValueError(f"unknown BP mode {self.mode!r}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must lie in [0, 1)")


@dataclass
class MessageState:
    mode: str
    var_to_factor: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)
    factor_to_var: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)
    iteration: int = 0

    def copy(self) -> "MessageState":
        return MessageState(self.mode, dict(self.var_to_factor), dict(self.factor_to_var), self.iteration)


@dataclass
class BpResult:
    beliefs: list[np.ndarray]
    converged: bool
    iterations: int
    state: MessageState


def normalize(v: np.ndarray, mode: str) -> np.ndarray:
    """Sum-to-one (sum mode) or max-to-zero (max mode); degenerate input -> uniform."""
    if mode == SUM:
        s = v.sum()
        if not (s > 0 and np.isfinite(s)):
            return np.full(v.shape, 1.0 / v.size)
        return v / s
    m = v.max()
    if not np.isfinite(m):
        return np.zeros(v.shape)
    return v - m


def active_factors(g: FactorGraph, mode: str):
    """Factors that exchange messages: all in sum mode, non-unary in max mode."""
    if mode == SUM:
        return list(g.factors)
    return [f for f in g.factors if len(f.scope) > 1]


def init_messages(g: FactorGraph, mode: str = SUM) -> MessageState:
    state = MessageState(mode)
    card = g.cardinalities
    for f in active_factors(g, mode):
        for i in f.scope:
            d = card[i]
            v = np.full(d, 1.0 / d) if mode == SUM else np.zeros(d)
            state.var_to_factor[(i, f.id)] = v
            state.factor_to_var[(f.id, i)] = v.copy()
    return state


def _var_message(state: MessageState, g: FactorGraph, i: int, c: int, normalized: bool = True) -> np.ndarray:
    mode = state.mode
    if mode == SUM:
        out = np.ones(g.cardinalities[i])
        for d in g.var_factors[i]:
            if d != c:
                out = out * state.factor_to_var[(d, i)]
    else:
        out = np.array(g.unary_log[i], dtype=np.float64)
        for d in g.var_factors[i]:
            if d != c and (d, i) in state.factor_to_var:
                out = out + state.factor_to_var[(d, i)]
    return normalize(out, mode) if normalized else out


def var_to_factor_update(state: MessageState, g: FactorGraph, i: int, c: int) -> np.ndarray:
    """Product (sum mode) or theta_i + sum (max mode) of incoming factor messages except c's."""
    return _var_message(state, g, i, c)


def dense_factor_message(table: np.ndarray, incoming: Sequence[np.ndarray], slot: int, mode: str) -> np.ndarray:
    """Unnormalized factor-to-variable message from a dense table.

    Sum mode: ``table`` is the linear potential; the incoming messages are
    combined by an outer product (ones at ``slot``), multiplied into the table
    and summed out.  Max mode: same with log-table, sums and max.
    """
    n = table.ndim
    acc = table
    for j, m in enumerate(incoming):
        if j == slot:
            continue
        view = [1] * n
        view[j] = m.shape[0]
        acc = acc * m.reshape(view) if mode == SUM else acc + m.reshape(view)
    others = tuple(a for a in range(n) if a != slot)
    if not others:
        return np.array(acc, dtype=np.float64)
    return acc.sum(axis=others) if mode == SUM else acc.max(axis=others)


def dense_factor_messages(table: np.ndarray, incoming: Sequence[np.ndarray], mode: str) -> list[np.ndarray]:
    """All outgoing messages of a dense factor at once.

    Same values as :func:`dense_factor_message` per slot, but the
    leave-one-out combinations come from prefix and suffix accumulations,
    costing O(n) table-sized operations instead of O(n^2).
    """
    n = table.ndim
    if n == 1:
        return [np.array(table, dtype=np.float64)]
    op = np.multiply if mode == SUM else np.add
    red = np.sum if mode == SUM else np.max
    views = []
    for j, m in enumerate(incoming):
        view = [1] * n
        view[j] = m.shape[0]
        views.append(m.reshape(view))
    prefix = [table]
    for j in range(n - 1):
        prefix.append(op(prefix[-1], views[j]))
    out = [None] * n
    suffix = None
    for i in range(n - 1, -1, -1):
        acc = prefix[i] if suffix is None else op(prefix[i], suffix)
        out[i] = red(acc, axis=tuple(a for a in range(n) if a != i))
        suffix = views[i] if suffix is None else op(suffix, views[i])
    return out


def linear_table(log_table: np.ndarray) -> np.ndarray:
    """exp(log_table - max); the scale is irrelevant once messages are normalized."""
    top = np.max(log_table)
    if not np.isfinite(top):
        return np.zeros(log_table.shape)
    return np.exp(log_table - top)


def _linear_table(g: FactorGraph, fid: int) -> np.ndarray:
    cache = g.__dict__.setdefault("_linear_tables", {})
    if fid not in cache:
        cache[fid] = linear_table(g.log_table(fid))
    return cache[fid]


def factor_to_var_update(state: MessageState, g: FactorGraph, c: int, i: int) -> np.ndarray:
    """Generic dense message from factor ``c`` to variable ``i`` (normalized)."""
    f = g.factor(c)
    incoming = [state.var_to_factor[(j, c)] if j != i else None for j in f.scope]
    table = _linear_table(g, c) if state.mode == SUM else g.log_table(c)
    return normalize(dense_factor_message(table, incoming, f.scope.index(i), state.mode), state.mode)


def parity_factor_message_fast(incoming: Sequence[np.ndarray], mode: str = SUM) -> np.ndarray:
    """Even-parity factor message from the other scope members' binary messages.

    Sum mode uses the product of differences ``p(0) - p(1)``; max mode is the
    min-sum rule (best unconstrained choice, paying the smallest flip cost when
    its parity is odd).  Both equal the dense update on the parity table.
    """
    if mode == SUM:
        prod = 1.0
        for m in incoming:
            s = m[0] + m[1]
            prod *= (m[0] - m[1]) / s if s > 0 else 0.0
        return normalize(np.array([0.5 * (1.0 + prod), 0.5 * (1.0 - prod)]), SUM)
    base = 0.0
    odd = 0
    flip = np.inf
    for m in incoming:
        best = 1 if m[1] > m[0] else 0
        odd ^= best
        base += m[best]
        flip = min(flip, abs(m[0] - m[1]) if np.isfinite(m[0]) or np.isfinite(m[1]) else np.inf)
    if not incoming:
        return np.array([0.0, -np.inf])
    out = np.array([base, base - flip]) if odd == 0 else np.array([base - flip, base])
    return normalize(out, MAX)


def _dense_updater(g: FactorGraph, fid: int, mode: str) -> Updater:
    table = _linear_table(g, fid) if mode == SUM else g.log_table(fid)
    return lambda incoming: dense_factor_messages(table, incoming, mode)


def _parity_updater(mode: str) -> Updater:
    def update(incoming):
        return [parity_factor_message_fast(incoming[:slot] + incoming[slot + 1:], mode)
                for slot in range(len(incoming))]
    return update


def _change(new: np.ndarray, old: np.ndarray) -> float:
    with np.errstate(invalid="ignore"):
        d = float(np.abs(new - old).max())
    if d == d:
        return d
    diff = np.abs(np.where(new == old, 0.0, new - old))  # matching infinities count as no change
    return float(np.nan_to_num(diff, nan=np.inf).max())


def _blend(new: np.ndarray, old: np.ndarray, lam: float, mode: str) -> np.ndarray:
    if lam == 0.0:
        return new
    if mode == MAX:
        # keep -inf entries exact; 0 * -inf is undefined
        both = np.isneginf(new) & np.isneginf(old)
        out = np.where(both, -np.inf, (1.0 - lam) * np.where(np.isneginf(new), -1e300, new)
                       + lam * np.where(np.isneginf(old), -1e300, old))
        return normalize(out, MAX)
    return normalize((1.0 - lam) * new + lam * old, SUM)


def beliefs(state: MessageState, g: FactorGraph, normalized: bool = True) -> list[np.ndarray]:
    """Per-variable beliefs from the current factor-to-variable messages."""
    out = []
    for i, v in enumerate(g.variables):
        if state.mode == SUM:
            b = np.ones(v.cardinality)
            for d in g.var_factors[i]:
                b = b * state.factor_to_var[(d, i)]
        else:
            b = np.array(g.unary_log[i], dtype=np.float64)
            for d in g.var_factors[i]:
                if (d, i) in state.factor_to_var:
                    b = b + state.factor_to_var[(d, i)]
        out.append(normalize(b, state.mode) if normalized else b)
    return out


def iterate_bp(g: FactorGraph, config: BpConfig | None = None,
               updaters: dict[int, Updater] | None = None) -> Iterator[tuple[MessageState, float]]:
    """Yield ``(state, max_change)`` after every flooding iteration.

    ``updaters`` overrides the factor-to-variable rule for chosen factor ids;
    each updater maps the incoming messages (scope order) to the list of
    unnormalized outgoing messages, one per scope slot.
    """
    cfg = config or BpConfig()
    mode = cfg.mode
    facs = active_factors(g, mode)
    rules: dict[int, Updater] = {}
    for f in facs:
        if updaters and f.id in updaters:
            rules[f.id] = updaters[f.id]
        elif cfg.parity_fast_path and isinstance(f.potential, ParityLog):
            rules[f.id] = _parity_updater(mode)
        else:
            rules[f.id] = _dense_updater(g, f.id, mode)
    keep = (lambda v: normalize(v, mode)) if cfg.normalize else (lambda v: v)
    lam = cfg.damping

    state = init_messages(g, mode)
    for _ in range(cfg.max_iterations):
        delta = 0.0
        v2f = {}
        for f in facs:
            for i in f.scope:
                new = keep(_var_message(state, g, i, f.id, normalized=False))
                old = state.var_to_factor[(i, f.id)]
                new = _blend(new, old, lam, mode)
                delta = max(delta, _change(new, old))
                v2f[(i, f.id)] = new
        f2v = {}
        for f in facs:
            incoming = [v2f[(j, f.id)] for j in f.scope]
            for i, out in zip(f.scope, rules[f.id](incoming)):
                new = keep(out)
                old = state.factor_to_var[(f.id, i)]
                new = _blend(new, old, lam, mode)
                delta = max(delta, _change(new, old))
                f2v[(f.id, i)] = new
        state = MessageState(mode, v2f, f2v, state.iteration + 1)
        yield state, delta


def run_bp(g: FactorGraph, config: BpConfig | None = None,
           updaters: dict[int, Updater] | None = None) -> BpResult:
    """Loopy BP to convergence (L-inf message change < tol) or the iteration cap.

    Non-convergence is reported through ``converged``, never raised.
    """
    cfg = config or BpConfig()
    state = init_messages(g, cfg.mode)
    converged = False
    for state, delta in iterate_bp(g, cfg, updaters):
        if delta < cfg.tol:
            converged = True
            break
    return BpResult(beliefs(state, g), converged, state.iteration, state)


def decode_map_from_beliefs(beliefs: Sequence[np.ndarray]) -> tuple[int, ...]:
    """Per-variable argmax; ties go to the lowest state."""
    return tuple(int(np.argmax(b)) for b in beliefs)
