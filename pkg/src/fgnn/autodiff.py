"""A small reverse-mode differentiation tape over numpy arrays.

Every op returns a :class:`Node` holding its value, its parents and a
closure mapping the upstream gradient to one gradient per parent.
:func:`backward` visits nodes once each in reverse topological order.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy import sparse


class Node:
    __slots__ = ("value", "parents", "grad_fn", "op", "name")

    def __init__(self, value, parents: Sequence["Node"] = (), grad_fn: Callable | None = None,
                 op: str = "const", name: str | None = None):
        value = np.asarray(value)
        # float64 unless an extended float type is passed in deliberately
        self.value = value if value.dtype == np.longdouble else value.astype(np.float64, copy=False)
        self.parents = tuple(parents)
        self.grad_fn = grad_fn
        self.op = op
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(op={self.op}, shape={self.value.shape})"


def param(value, name: str | None = None) -> Node:
    return Node(value, op="param", name=name)


def const(value) -> Node:
    return Node(value, op="const")


def _check(cond: bool, msg: str):
    if not cond:
        raise ValueError(msg)


# -- elementwise ------------------------------------------------------------

def add(a: Node, b: Node) -> Node:
    _check(a.shape == b.shape, f"add shape mismatch {a.shape} vs {b.shape}")
    return Node(a.value + b.value, (a, b), lambda g: (g, g), "add")


def mul(a: Node, b: Node) -> Node:
    _check(a.shape == b.shape, f"mul shape mismatch {a.shape} vs {b.shape}")
    av, bv = a.value, b.value
    return Node(av * bv, (a, b), lambda g: (g * bv, g * av), "mul")


def relu(x: Node) -> Node:
    mask = x.value > 0
    return Node(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,), "relu")


def scale(x: Node, c: float) -> Node:
    return Node(x.value * c, (x,), lambda g: (g * c,), "scale")


# -- linear algebra ---------------------------------------------------------

def linear(x: Node, w: Node, b: Node | None = None) -> Node:
    """Row-wise affine map ``x @ w + b`` for x of shape (N, in)."""
    _check(x.value.ndim == 2 and w.value.ndim == 2 and x.shape[1] == w.shape[0],
           f"linear shape mismatch {x.shape} @ {w.shape}")
    xv, wv = x.value, w.value
    out = xv @ wv
    if b is None:
        return Node(out, (x, w), lambda g: (g @ wv.T, xv.T @ g), "linear")
    _check(b.shape == (w.shape[1],), f"bias shape {b.shape} does not match {w.shape}")
    return Node(out + b.value, (x, w, b), lambda g: (g @ wv.T, xv.T @ g, g.sum(axis=0)), "linear")


def matvec(a: Node, x: Node) -> Node:
    """Batched matrix-vector product: a (N, out, h), x (N, h) -> (N, out)."""
    _check(a.value.ndim == 3 and x.value.ndim == 2 and a.shape[0] == x.shape[0] and a.shape[2] == x.shape[1],
           f"matvec shape mismatch {a.shape} x {x.shape}")
    av, xv = a.value, x.value
    return Node(np.einsum("noh,nh->no", av, xv), (a, x),
                lambda g: (g[:, :, None] * xv[:, None, :], np.einsum("noh,no->nh", av, g)), "matvec")


def typed_matvec(mats: Node, types: np.ndarray, x: Node) -> Node:
    """Row n gets ``mats[types[n]] @ x[n]``; mats (U, out, h), x (N, h).

    Equivalent to ``matvec(gather(mats, types), x)`` without materializing a
    matrix per row.
    """
    mv, xv = mats.value, x.value
    _check(mv.ndim == 3 and xv.ndim == 2 and mv.shape[2] == xv.shape[1] and len(types) == xv.shape[0],
           f"typed_matvec shape mismatch {mv.shape} x {xv.shape}")
    groups = [(u, np.flatnonzero(types == u)) for u in range(mv.shape[0])]
    groups = [(u, idx) for u, idx in groups if idx.size]
    out = np.empty((xv.shape[0], mv.shape[1]), dtype=np.result_type(mv, xv))
    for u, idx in groups:
        out[idx] = xv[idx] @ mv[u].T

    def grad_fn(g):
        gm = np.zeros_like(mv)
        gx = np.empty_like(xv)
        for u, idx in groups:
            gu = g[idx]
            gm[u] = gu.T @ xv[idx]
            gx[idx] = gu @ mv[u]
        return gm, gx

    return Node(out, (mats, x), grad_fn, "typed_matvec")


# -- structural -------------------------------------------------------------

def concat(xs: Sequence[Node], axis: int = 1) -> Node:
    vals = [x.value for x in xs]
    sizes = np.cumsum([v.shape[axis] for v in vals])[:-1]
    return Node(np.concatenate(vals, axis=axis), xs, lambda g: tuple(np.split(g, sizes, axis=axis)), "concat")


def reshape(x: Node, shape) -> Node:
    old = x.shape
    return Node(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def gather(x: Node, idx: np.ndarray) -> Node:
    """Rows ``x[idx]``; repeated indices accumulate gradient."""
    idx = np.asarray(idx, dtype=np.int64)
    n = x.shape[0]

    def grad_fn(g):
        scatter = sparse.csr_matrix((np.ones(len(idx)), (idx, np.arange(len(idx)))), shape=(n, len(idx)))
        return (np.asarray(scatter @ g.reshape(len(idx), -1)).reshape((n,) + g.shape[1:]),)

    return Node(x.value[idx], (x,), grad_fn, "gather")


def row_slice(x: Node, start: int, stop: int) -> Node:
    """Rows ``x[start:stop]`` of a 2-D node."""
    shape = x.shape

    def grad_fn(g):
        out = np.zeros(shape)
        out[start:stop] = g
        return (out,)

    return Node(x.value[start:stop], (x,), grad_fn, "row_slice")


class Segments:
    """Precomputed layout grouping rows by segment id.

    Rows of one segment keep their original relative order, so position 0 in
    a segment is its lowest row index.
    """

    def __init__(self, seg: np.ndarray, num_segments: int):
        seg = np.asarray(seg, dtype=np.int64)
        self.num = int(num_segments)
        self.seg = seg
        self.order = np.argsort(seg, kind="stable")
        counts = np.bincount(seg, minlength=self.num)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
        pos = np.empty(len(seg), dtype=np.int64)
        pos[self.order] = np.arange(len(seg)) - starts[seg[self.order]]
        self.width = int(counts.max()) if len(seg) else 0
        self.pos = pos
        self.counts = counts
        self.starts = starts
        self.nonempty = np.flatnonzero(counts)

    def pad(self, values: np.ndarray, fill: float) -> np.ndarray:
        out = np.full((self.num, max(self.width, 1)) + values.shape[1:], fill, dtype=values.dtype)
        out[self.seg, self.pos] = values
        return out

    def reduce(self, values: np.ndarray, ufunc, fill: float) -> np.ndarray:
        """``ufunc.reduceat`` over each segment; empty segments get ``fill``."""
        out = np.full((self.num,) + values.shape[1:], fill, dtype=values.dtype)
        if len(self.nonempty):
            out[self.nonempty] = ufunc.reduceat(values[self.order], self.starts[self.nonempty], axis=0)
        return out


def aggregate(x: Node, segs: Segments, mode: str) -> Node:
    """Per-segment elementwise max / sum / product of rows of ``x``.

    Empty segments give zeros (max, sum) or ones (prod).  The max gradient
    goes to one row per coordinate: the lowest-index maximizer.
    """
    xv = x.value
    _check(xv.shape[0] == len(segs.seg), "aggregate: one segment id per row required")
    seg, pos = segs.seg, segs.pos
    if mode == "sum":
        out = segs.reduce(xv, np.add, 0.0)
        return Node(out, (x,), lambda g: (g[seg],), "agg_sum")
    if mode == "max":
        padded = segs.pad(xv, -np.inf)
        # column sweep keeps the first maximizer on ties
        out = padded[:, 0].copy()
        arg = np.zeros(out.shape, dtype=np.int64)
        for w in range(1, padded.shape[1]):
            col = padded[:, w]
            arg = np.where(col > out, w, arg)
            out = np.maximum(out, col)
        out[segs.counts == 0] = 0.0
        winner = arg[seg] == pos.reshape((-1,) + (1,) * (xv.ndim - 1))

        def grad_fn(g):
            return (np.where(winner, g[seg], 0.0),)

        return Node(out, (x,), grad_fn, "agg_max")
    if mode == "prod":
        padded = segs.pad(xv, 1.0)
        out = padded.prod(axis=1)
        # product of the other rows without division: prefix * suffix
        ones = np.ones_like(padded[:, :1])
        prefix = np.concatenate([ones, np.cumprod(padded, axis=1)[:, :-1]], axis=1)
        suffix = np.concatenate([np.cumprod(padded[:, ::-1], axis=1)[:, ::-1][:, 1:], ones], axis=1)
        others = (prefix * suffix)[seg, pos]
        return Node(out, (x,), lambda g: (g[seg] * others,), "agg_prod")
    raise ValueError(f"unknown aggregator {mode!r}")


# -- losses -----------------------------------------------------------------

def softmax_cross_entropy(logits: Node, labels: np.ndarray) -> Node:
    """Mean cross-entropy of integer ``labels`` under row-wise softmax."""
    z = logits.value
    labels = np.asarray(labels, dtype=np.int64)
    _check(z.ndim == 2 and labels.shape == (z.shape[0],), "cross-entropy shape mismatch")
    shifted = z - z.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    n = z.shape[0]
    loss = -logp[np.arange(n), labels].mean()

    def grad_fn(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return (g * p / n,)

    return Node(loss, (logits,), grad_fn, "softmax_xent")


def sum_squares(x: Node) -> Node:
    xv = x.value
    return Node(np.sum(xv * xv), (x,), lambda g: (2.0 * g * xv,), "sum_squares")


# -- backward ---------------------------------------------------------------

def _topological(root: Node) -> list[Node]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Node) -> dict[int, np.ndarray]:
    """Gradients of a scalar ``loss`` keyed by ``id(node)`` for every node on the tape."""
    _check(loss.value.size == 1, "backward needs a scalar loss")
    grads = {id(loss): np.ones_like(loss.value)}
    for node in reversed(_topological(loss)):
        g = grads.get(id(node))
        if g is None or node.grad_fn is None:
            continue
        for p, gp in zip(node.parents, node.grad_fn(g)):
            if gp is None:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + gp
            else:
                grads[id(p)] = gp
    return grads


def param_grads(loss: Node, params: dict[str, Node]) -> dict[str, np.ndarray]:
    """Gradient per named parameter; exact zeros for parameters off the tape."""
    grads = backward(loss)
    return {k: np.asarray(grads.get(id(p), np.zeros_like(p.value))).reshape(p.shape)
            for k, p in params.items()}
