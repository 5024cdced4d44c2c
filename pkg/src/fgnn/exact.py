"""Brute-force exact inference by full enumeration of the joint state space.

Deliberately independent of any message-passing code: the joint log-score
tensor is assembled by broadcasting every factor's log-table over all
variables, then reduced directly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .graph import FactorGraph

DEFAULT_STATE_CAP = 2 ** 24


class StateSpaceTooLarge(RuntimeError):
    pass


class DegenerateModel(RuntimeError):
    """Every joint assignment is forbidden (Z == 0)."""


@dataclass(frozen=True)
class MapResult:
    assignment: tuple[int, ...]
    log_score: float


def joint_log_scores(g: FactorGraph, cap: int = DEFAULT_STATE_CAP) -> np.ndarray:
    """Unnormalized log-probability of every joint assignment, shape = cardinalities."""
    shape = g.cardinalities
    size = int(np.prod(shape, dtype=object))
    if size > cap:
        raise StateSpaceTooLarge(f"state space of {size} assignments exceeds cap {cap}")
    n = len(shape)
    total = np.zeros(shape)
    for f in g.factors:
        table = g.log_table(f.id)
        view = [1] * n
        for i, d in zip(f.scope, table.shape):
            view[i] = d
        total = total + table.reshape(view)
    return total


def score(g: FactorGraph, assignment) -> float:
    """Sum of factor log-potentials at one joint assignment."""
    return float(sum(g.log_table(f.id)[tuple(assignment[i] for i in f.scope)] for f in g.factors))


def partition_function(g: FactorGraph, cap: int = DEFAULT_STATE_CAP) -> float:
    """log Z."""
    logz = float(logsumexp(joint_log_scores(g, cap)))
    if logz == -np.inf:
        raise DegenerateModel("all assignments have zero probability")
    return logz


def exact_marginals(g: FactorGraph, cap: int = DEFAULT_STATE_CAP) -> list[np.ndarray]:
    """Per-variable marginal probabilities p_i(x_i)."""
    joint = joint_log_scores(g, cap)
    logz = logsumexp(joint)
    if logz == -np.inf:
        raise DegenerateModel("all assignments have zero probability")
    n = joint.ndim
    out = []
    for i in range(n):
        others = tuple(a for a in range(n) if a != i)
        lm = logsumexp(joint, axis=others) if others else joint
        p = np.exp(lm - logz)
        out.append(p / p.sum())
    return out


def exact_map(g: FactorGraph, cap: int = DEFAULT_STATE_CAP) -> MapResult:
    """Global maximizer; ties go to the lexicographically smallest assignment."""
    joint = joint_log_scores(g, cap)
    flat = int(np.argmax(joint))  # first maximum in row-major order
    best = joint.flat[flat]
    if best == -np.inf:
        raise DegenerateModel("all assignments have zero probability")
    assignment = tuple(int(x) for x in np.unravel_index(flat, joint.shape))
    return MapResult(assignment, float(best))


def map_is_unique(g: FactorGraph, gap: float = 1e-9, cap: int = DEFAULT_STATE_CAP) -> bool:
    """True when the best score beats the runner-up by more than ``gap``."""
    joint = joint_log_scores(g, cap).ravel()
    if joint.size < 2:
        return True
    top2 = np.partition(joint, -2)[-2:]
    return bool(top2[1] - top2[0] > gap)
