"""Dense and CP-decomposed tensors plus the reductions BP is built from.

Dense tensors are plain float64 ``numpy`` arrays in C (row-major) order, so
the last axis varies fastest.  Factor scopes index their tables in ascending
variable-id order.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

__all__ = [
    "CPTensor",
    "as_dense",
    "densify",
    "outer_product",
    "hadamard",
    "reduce_except",
    "enumerate_assignments",
]


def as_dense(data, shape: Sequence[int] | None = None) -> np.ndarray:
    """Validate and return a read-only float64 tensor.

    ``data`` may be nested lists or a flat row-major list when ``shape`` is
    given.
    """
    arr = np.array(data, dtype=np.float64)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if arr.size != int(np.prod(shape)):
            raise ValueError(f"{arr.size} values do not fill shape {shape}")
        arr = arr.reshape(shape)
    if arr.ndim == 0:
        raise ValueError("tensor shape must be non-empty")
    if any(s < 1 for s in arr.shape):
        raise ValueError(f"every cardinality must be >= 1, got {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class CPTensor:
    """Sum of ``rank`` outer products; ``matrices[j]`` has shape ``(d_j, rank)``.

    Column ``r`` of every matrix together forms the r-th rank-1 term; any
    per-term scale is assumed already absorbed into the columns.
    """

    matrices: tuple[np.ndarray, ...]

    def __init__(self, matrices):
        mats = []
        for j, m in enumerate(matrices):
            m = np.array(m, dtype=np.float64)
            if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
                raise ValueError(f"matrix {j} must be a non-empty 2-d array, got shape {m.shape}")
            m.setflags(write=False)
            mats.append(m)
        if not mats:
            raise ValueError("CP tensor needs at least one factor matrix")
        ranks = {m.shape[1] for m in mats}
        if len(ranks) != 1:
            raise ValueError(f"factor matrices disagree on rank: {sorted(ranks)}")
        object.__setattr__(self, "matrices", tuple(mats))

    @property
    def arity(self) -> int:
        return len(self.matrices)

    @property
    def rank(self) -> int:
        return self.matrices[0].shape[1]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(m.shape[0] for m in self.matrices)

    @classmethod
    def from_rank1_terms(cls, terms: Sequence[Sequence[Sequence[float]]]) -> "CPTensor":
        """Build from a list of rank-1 terms, each a list of per-axis vectors."""
        arity = len(terms[0])
        return cls([np.column_stack([np.asarray(t[j], dtype=np.float64) for t in terms])
                    for j in range(arity)])


def densify(cp: CPTensor) -> np.ndarray:
    """Materialize ``sum_r prod_j matrices[j][i_j, r]`` as a dense tensor."""
    letters = "abcdefghijklmnopqrstuvwxyz"
    if cp.arity > len(letters) - 1:
        raise ValueError("arity too large to densify")
    spec = ",".join(f"{letters[j]}z" for j in range(cp.arity)) + "->" + letters[: cp.arity]
    return as_dense(np.einsum(spec, *cp.matrices))


def outer_product(vectors: Sequence[Sequence[float]]) -> np.ndarray:
    if len(vectors) == 0:
        raise ValueError("outer_product needs at least one vector")
    out = np.ones((), dtype=np.float64)
    for v in vectors:
        v = np.asarray(v, dtype=np.float64)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("outer_product inputs must be non-empty vectors")
        out = np.multiply.outer(out, v)
    return as_dense(out)


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"hadamard shape mismatch: {a.shape} vs {b.shape}")
    return as_dense(a * b)


def reduce_except(t: np.ndarray, axis: int, mode: str = "sum") -> np.ndarray:
    """Sum or max over every axis but ``axis``; returns a length-``d_axis`` vector."""
    t = np.asarray(t, dtype=np.float64)
    if not 0 <= axis < t.ndim:
        raise IndexError(f"axis {axis} out of range for arity {t.ndim}")
    others = tuple(a for a in range(t.ndim) if a != axis)
    if mode == "sum":
        return t.sum(axis=others) if others else t.copy()
    if mode == "max":
        return t.max(axis=others) if others else t.copy()
    raise ValueError(f"unknown reduction mode {mode!r}")


def enumerate_assignments(shape: Sequence[int]) -> Iterator[tuple[int, ...]]:
    """All assignments of a product domain in row-major order."""
    shape = tuple(int(s) for s in shape)
    if not shape or any(s < 1 for s in shape):
        raise ValueError(f"invalid shape {shape}")
    return itertools.product(*(range(s) for s in shape))
