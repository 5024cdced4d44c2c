"""Low-rank Sum-Product: factor messages straight from CP factor matrices.

For a CP factor with matrices ``W_j`` (d_j x R) the message to the variable
in slot ``i`` is ``W_i @ prod_{j != i} (W_j.T @ m_j)`` (elementwise product
over j), which costs O(n * R * d) and never builds the dense table.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .bp import SUM, BpConfig, BpResult, beliefs, iterate_bp, init_messages, normalize, var_to_factor_update
from .graph import CP, FactorGraph
from .tensor import CPTensor


class DecompositionValidityError(ValueError):
    """A CP factor produced a clearly negative message."""


class ConfigurationError(ValueError):
    pass


NEG_TOL = 1e-9
ZERO_CLAMP = 1e-12


def gamma_vectors(cp: CPTensor, incoming: Sequence[np.ndarray | None], target: int) -> list[np.ndarray | None]:
    """Projected messages ``W_j.T @ m_j``; the target's slot is left as None."""
    if len(incoming) != cp.arity:
        raise ValueError(f"expected {cp.arity} incoming messages, got {len(incoming)}")
    out = []
    for j, (w, m) in enumerate(zip(cp.matrices, incoming)):
        if j == target:
            out.append(None)
            continue
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (w.shape[0],):
            raise ValueError(f"message {j} has shape {m.shape}, factor expects ({w.shape[0]},)")
        out.append(w.T @ m)
    return out


def lr_message_unnormalized(cp: CPTensor, incoming: Sequence[np.ndarray | None], target: int) -> np.ndarray:
    if not 0 <= target < cp.arity:
        raise IndexError(f"target slot {target} out of range for arity {cp.arity}")
    gam = np.ones(cp.rank)
    for g in gamma_vectors(cp, incoming, target):
        if g is not None:
            gam = gam * g
    return _check_message(cp.matrices[target] @ gam)


def _check_message(m: np.ndarray) -> np.ndarray:
    if np.any(m < -NEG_TOL):
        raise DecompositionValidityError(
            f"CP factor yields negative message entries (min {m.min():.3g}); not a valid potential")
    m[np.abs(m) < ZERO_CLAMP] = 0.0
    return np.maximum(m, 0.0)


def lr_messages_unnormalized(cp: CPTensor, incoming: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Messages to every slot; leave-one-out Gamma products via prefix/suffix."""
    gams = gamma_vectors(cp, incoming, -1)
    n = cp.arity
    prefix = [np.ones(cp.rank)]
    for g in gams[:-1]:
        prefix.append(prefix[-1] * g)
    out = [None] * n
    suffix = np.ones(cp.rank)
    for i in range(n - 1, -1, -1):
        m = cp.matrices[i] @ (prefix[i] * suffix)
        out[i] = _check_message(m)
        suffix = suffix * gams[i]
    return out


def lr_factor_to_var(cp: CPTensor, incoming: Sequence[np.ndarray | None], target: int) -> np.ndarray:
    """Normalized factor-to-variable message for a CP factor."""
    return normalize(lr_message_unnormalized(cp, incoming, target), SUM)


def lr_var_to_factor(state, g: FactorGraph, i: int, c: int) -> np.ndarray:
    """Variable-to-factor rule; identical to the dense Sum-Product rule."""
    return var_to_factor_update(state, g, i, c)


def _cp_updaters(g: FactorGraph) -> dict:
    ups = {}
    for f in g.factors:
        if isinstance(f.potential, CP):
            cp = f.potential.tensor
            ups[f.id] = lambda incoming, cp=cp: lr_messages_unnormalized(cp, incoming)
        elif len(f.scope) > 1:
            raise ConfigurationError(
                f"factor {f.id} has arity {len(f.scope)} but is not CP-typed; low-rank BP needs CP factors")
    return ups


def iterate_lowrank_bp(g: FactorGraph, config: BpConfig | None = None):
    cfg = config or BpConfig()
    if cfg.mode != SUM:
        raise ConfigurationError("low-rank BP is a Sum-Product algorithm")
    return iterate_bp(g, cfg, _cp_updaters(g))


def run_lowrank_bp(g: FactorGraph, config: BpConfig | None = None) -> BpResult:
    """Sum-Product loop of :func:`fgnn.bp.run_bp` with CP factor updates."""
    cfg = config or BpConfig()
    state = init_messages(g, SUM)
    converged = False
    for state, delta in iterate_lowrank_bp(g, cfg):
        if delta < cfg.tol:
            converged = True
            break
    return BpResult(beliefs(state, g), converged, state.iteration, state)
