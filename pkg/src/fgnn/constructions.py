"""Fixed-weight network constructions that reproduce message passing exactly.

* :func:`build_matrix_max_net` - a ReLU network computing a row maximum.
* :func:`build_lossless_agg_matrices` - block routings under which a max
  aggregation of non-negative vectors returns their concatenation.
* :func:`build_feature_sum_tensors` - routing plus a summing matrix that turn
  a max aggregation into a column sum.
* :func:`simulate_maxproduct_via_fgnn` - FGNN layers assembled from the three
  pieces above that replay decomposed Max-Product iteration by iteration.
* :func:`hadamard_layer_message` - a product-aggregation layer reproducing the
  low-rank Sum-Product factor message.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .bp import MAX, normalize
from .graph import FactorGraph, MaxDecomp
from .lowrank import lr_factor_to_var
from .nn import MlpParams
from .tensor import CPTensor


class LayoutError(ValueError):
    """The graph does not fit the feature layout the construction expects."""


# -- row maximum -------------------------------------------------------------

def build_matrix_max_net(l: int) -> MlpParams:
    """ReLU network mapping each row of a (k, l) matrix to its maximum.

    Pairs are merged with ``max(a, b) = relu(a - b) + relu(b) - relu(-b)``
    in a balanced tree of ``ceil(log2 l)`` levels, each level being one ReLU
    layer followed by one linear layer.  Inputs are padded to a power of two
    by repeating the last column, which leaves the maximum unchanged.
    ``l == 1`` gives the empty (identity) network.
    """
    if l < 1:
        raise ValueError("l must be positive")
    levels = math.ceil(math.log2(l)) if l > 1 else 0
    width = 2 ** levels
    layers = []
    pad = np.zeros((l, width))
    pad[np.arange(l), np.arange(l)] = 1.0
    pad[l - 1, l:] = 1.0
    for level in range(levels):
        pairs = width // 2
        up = np.zeros((width, 3 * pairs))
        down = np.zeros((3 * pairs, pairs))
        for p in range(pairs):
            a, b = 2 * p, 2 * p + 1
            up[a, 3 * p] = 1.0
            up[b, 3 * p] = -1.0       # relu(a - b)
            up[b, 3 * p + 1] = 1.0    # relu(b)
            up[b, 3 * p + 2] = -1.0   # relu(-b)
            down[3 * p, p] = 1.0
            down[3 * p + 1, p] = 1.0
            down[3 * p + 2, p] = -1.0
        if level == 0:
            up = pad @ up
        layers.append((up, np.zeros(3 * pairs), "relu"))
        layers.append((down, np.zeros(pairs), "identity"))
        width = pairs
    return MlpParams(layers)


def _apply_net(net: MlpParams, x: np.ndarray) -> np.ndarray:
    """Apply a row network to the last axis of ``x``; drops the unit output axis."""
    lead = x.shape[:-1]
    out = net(x.reshape(-1, x.shape[-1])) if net.layers else x.reshape(-1, x.shape[-1])
    return out.reshape(lead)


def net_max(net: MlpParams, x: np.ndarray) -> np.ndarray:
    return _apply_net(net, x)


def net_min(net: MlpParams, x: np.ndarray) -> np.ndarray:
    return -_apply_net(net, -x)


# -- aggregation routings ----------------------------------------------------

def build_lossless_agg_matrices(l: int, k: int) -> list[np.ndarray]:
    """``Q_i`` of shape (l*k, k): identity in block ``i``, zeros elsewhere.

    For non-negative ``f_1..f_l`` of length ``k``, the elementwise max over
    ``i`` of ``Q_i @ f_i`` is the concatenation ``[f_1, ..., f_l]``.
    """
    if l < 1 or k < 1:
        raise ValueError("l and k must be positive")
    out = []
    for i in range(l):
        q = np.zeros((l * k, k))
        q[i * k:(i + 1) * k] = np.eye(k)
        out.append(q)
    return out


def build_feature_sum_tensors(k: int, l: int) -> tuple[np.ndarray, np.ndarray]:
    """Routing ``W`` (k, l, k*l) and summing matrix ``Q`` (l, k*l).

    For non-negative ``X`` (k, l): ``y[i] = X[i] @ W[i]`` puts ``x_ij`` at
    coordinate ``i*l + j``; ``yhat = max_i y[i]`` then holds every entry and
    ``Q @ yhat`` is the vector of column sums of ``X``.
    """
    if l < 1 or k < 1:
        raise ValueError("k and l must be positive")
    w = np.zeros((k, l, k * l))
    q = np.zeros((l, k * l))
    for i in range(k):
        for j in range(l):
            w[i, j, i * l + j] = 1.0
            q[j, i * l + j] = 1.0
    return w, q


def feature_sum(x: np.ndarray) -> np.ndarray:
    """Column sums of non-negative ``x`` via route, max-aggregate, linear."""
    k, l = x.shape
    w, q = build_feature_sum_tensors(k, l)
    y = np.einsum("ij,ijr->ir", x, w)
    return q @ y.max(axis=0)


# -- decomposed Max-Product simulation ---------------------------------------

@dataclass
class _Layout:
    phi: np.ndarray          # (C, S, D, Z) decomposition tables, padded by duplication
    theta: np.ndarray        # (V, D) unary log-potentials, padded by duplication
    edge_fac: np.ndarray     # (E,)
    edge_var: np.ndarray     # (E,)
    edge_slot: np.ndarray    # (E,) position of the variable in the factor scope
    edge_pos: np.ndarray     # (E,) position of the factor among the variable's factors
    cards: list[int]
    num_slots: int
    num_pos: int


def _pad_dup(a: np.ndarray, size: int, axis: int) -> np.ndarray:
    """Pad ``axis`` to ``size`` by repeating its last entry."""
    extra = size - a.shape[axis]
    if extra <= 0:
        return a
    last = np.take(a, [a.shape[axis] - 1], axis=axis)
    return np.concatenate([a] + [last] * extra, axis=axis)


def _layout(g: FactorGraph) -> _Layout:
    facs = [f for f in g.factors if len(f.scope) > 1]
    for f in facs:
        if not isinstance(f.potential, MaxDecomp):
            raise LayoutError(f"factor {f.id} is not max-decomposed; use decompose_graph first")
    theta = g.unary_log
    if not all(np.all(np.isfinite(t)) for t in theta):
        raise LayoutError("unary log-potentials must be finite")
    cards = list(g.cardinalities)
    d = max(cards)
    s = max((len(f.scope) for f in facs), default=1)
    z = max((f.potential.factor.z_count for f in facs), default=1)
    phi = np.zeros((len(facs), s, d, z))
    for c, f in enumerate(facs):
        for slot, tab in enumerate(f.potential.factor.tables):
            phi[c, slot] = _pad_dup(_pad_dup(tab, z, 1), d, 0)
    degree = [0] * g.num_variables
    ev, ef, es, ep = [], [], [], []
    for c, f in enumerate(facs):
        for slot, i in enumerate(f.scope):
            ev.append(i)
            ef.append(c)
            es.append(slot)
            ep.append(degree[i])
            degree[i] += 1
    unary = np.array([_pad_dup(np.asarray(t, dtype=np.float64), d, 0) for t in theta]).reshape(len(theta), d)
    idx = [np.array(a, dtype=np.int64) for a in (ef, ev, es, ep)]
    return _Layout(phi, unary, *idx, cards, s, max(max(degree, default=0), 1))


def _segment_max(values: np.ndarray, seg: np.ndarray, num: int) -> np.ndarray:
    """Max aggregation over edges; segments without edges give zeros."""
    return ad.aggregate(ad.const(values.reshape(len(values), -1)), ad.Segments(seg, num), "max").value \
        .reshape((num,) + values.shape[1:])


def simulate_maxproduct_via_fgnn(g: FactorGraph, iterations: int) -> list[list[np.ndarray]]:
    """Run ``iterations`` fixed-weight FGNN layers replaying decomposed Max-Product.

    ``g`` must already be max-decomposed.  Factor features hold the stacked
    decomposition tables and the current z-beliefs ``b_{c->s}(z)`` for every
    slot; variable features hold the unary log-potentials and current belief.
    One-hot edge features pick the Q matrices: the slot of the variable in the
    factor (variable-to-factor routing) and the (slot, factor position at the
    variable) pair (factor-to-variable routing).

    Per layer:

    * VF: ``M`` recomputes the factor messages, forms
      ``max_x [phi_s(x, z) + b_j(x) - m_s(x)]`` with the max network and shifts
      it by its own minimum so it is non-negative; the lossless routing of slot
      ``j`` followed by max aggregation gathers all slots; a linear layer forms
      ``b_{c->i}(z) = sum_j u_j(z) - u_i(z)``.
    * FV: ``M`` computes ``max_z [b_{c->s}(z) + phi_s(x, z)]`` and shifts it
      non-negative; the feature-sum routing and max aggregation collect one
      message per factor; the summing matrix plus the unary term gives the
      belief.

    Min shifts change every message and belief by a per-vector constant,
    which max-normalization removes, so the returned per-iteration beliefs
    (max-normalized, one list per iteration) equal those of decomposed
    Max-Product.
    """
    if iterations < 0:
        raise ValueError("iterations must be non-negative")
    lay = _layout(g)
    C, S, D, Z = lay.phi.shape
    V = g.num_variables
    P = lay.num_pos
    net_x, net_z = build_matrix_max_net(D), build_matrix_max_net(Z)
    vf_route = np.stack(build_lossless_agg_matrices(S, Z))          # (S, S*Z, Z)
    fv_w, fv_q = build_feature_sum_tensors(P, D)                   # (P, D, P*D), (D, P*D)
    _, sum_q = build_feature_sum_tensors(S, Z)                     # slot sum at the factor
    phi_e = lay.phi[lay.edge_fac]                                   # (E, S, D, Z)

    belief = lay.theta.copy()
    zbel = np.zeros((C, S, Z))
    out = []
    for layer in range(iterations):
        # VF: M([g_c, f_j]) gives non-negative u for every slot
        if layer == 0:
            msg = np.zeros((len(lay.edge_fac), S, D))
        else:
            msg = net_max(net_z, zbel[lay.edge_fac][:, :, None, :] + phi_e)
            msg = msg - net_min(net_x, msg)[..., None]
        x = phi_e + (belief[lay.edge_var][:, None, :] - msg)[..., None]
        u = net_max(net_x, np.swapaxes(x, 2, 3))                   # (E, S, Z)
        u = u - net_min(net_z, u)[..., None]
        routed = np.einsum("erz,ez->er", vf_route[lay.edge_slot], u[np.arange(len(u)), lay.edge_slot])
        gathered = _segment_max(routed, lay.edge_fac, C)            # (C, S*Z) concatenation
        total = gathered @ sum_q.T                                  # sum over slots
        zbel = total[:, None, :] - gathered.reshape(C, S, Z)

        # FV: M([g_c, f_i]) gives non-negative messages for every slot
        m = net_max(net_z, zbel[lay.edge_fac][:, :, None, :] + phi_e)
        m = m - net_min(net_x, m)[..., None]
        picked = m[np.arange(len(m)), lay.edge_slot]                # Q(t_ci) selects the slot
        routed = np.einsum("ed,edr->er", picked, fv_w[lay.edge_pos])
        belief = lay.theta + _segment_max(routed, lay.edge_var, V) @ fv_q.T
        out.append([normalize(belief[i, :lay.cards[i]], MAX) for i in range(V)])
    return out


# -- product aggregation ------------------------------------------------------

def hadamard_layer_message(cp: CPTensor, incoming, target: int) -> np.ndarray:
    """Factor message from a product-aggregation layer with CP weights.

    Edge ``j`` carries the incoming message as its ``M`` output (identity)
    and ``Q(t_cj) = W_j^T``; product aggregation over ``j != target`` gives
    the rank-space vector, and the outer ``W_target`` applied on the
    receiving side maps it back.  Normalized to sum 1.
    """
    n = cp.arity
    others = [j for j in range(n) if j != target]
    if not others:
        raise ValueError("a product layer needs at least one other scope variable")
    d_max = max(cp.shape)
    feats = np.zeros((len(others), d_max))
    q = np.zeros((n, cp.rank, d_max))
    for r, j in enumerate(others):
        feats[r, :cp.shape[j]] = incoming[j]
    for j in range(n):
        q[j, :, :cp.shape[j]] = cp.matrices[j].T
    rows = ad.typed_matvec(ad.const(q), np.array(others), ad.const(feats))
    gamma = ad.aggregate(rows, ad.Segments(np.zeros(len(others), dtype=np.int64), 1), "prod").value[0]
    msg = cp.matrices[target] @ gamma
    return msg / msg.sum()


def hadamard_matches_lowrank(cp: CPTensor, incoming, target: int, atol: float = 1e-9) -> bool:
    return bool(np.allclose(hadamard_layer_message(cp, incoming, target),
                            lr_factor_to_var(cp, incoming, target), atol=atol, rtol=0))


# -- certifiers -------------------------------------------------------------------

def _small_loopy_graph(rng: np.random.Generator) -> FactorGraph:
    """Five variables of 2-3 states: a 5-cycle of pairwise factors plus one triple factor."""
    from .graph import DenseLog, Factor, build_graph

    cards = [int(c) for c in rng.integers(2, 4, 5)]
    facs = [Factor(i, (i,), DenseLog(rng.standard_normal(cards[i]))) for i in range(5)]
    for k, sc in enumerate([(0, 1), (1, 2), (2, 3), (3, 4), (0, 4), (0, 2, 4)]):
        facs.append(Factor(5 + k, sc, DenseLog(rng.standard_normal([cards[v] for v in sc]))))
    return build_graph(cards, facs)


def certify_constructions(seed: int = 0, inputs: int = 100, graphs: int = 20, iterations: int = 3,
                          tol: float = 1e-12, sim_tol: float = 1e-6) -> list[tuple[str, bool, float]]:
    """Run every construction on seeded inputs; ``(name, passed, worst error)`` per check."""
    from .maxdecomp import decompose_graph, iterate_decomposed_max_product
    from .rng import make_rng

    rng = make_rng(seed)
    results = []
    for l in (1, 2, 4, 8):
        net = build_matrix_max_net(l)
        x = rng.standard_normal((inputs, l)) * 10.0
        err = float(np.abs(net_max(net, x) - x.max(axis=1)).max())
        results.append((f"max_net[l={l}]", err <= tol, err))
    err = 0.0
    for _ in range(inputs):
        l, k = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        f = rng.random((l, k)) * (rng.random((l, k)) > 0.2)
        qs = build_lossless_agg_matrices(l, k)
        agg = np.max([q @ fi for q, fi in zip(qs, f)], axis=0)
        err = max(err, float(np.abs(agg - f.ravel()).max()))
    results.append(("lossless_agg", err <= tol, err))
    err = 0.0
    for _ in range(inputs):
        x = rng.random((int(rng.integers(1, 6)), int(rng.integers(1, 6)))) * 10.0
        err = max(err, float(np.abs(feature_sum(x) - x.sum(axis=0)).max()))
    results.append(("feature_sum", err <= tol, err))
    err = 0.0
    for _ in range(graphs):
        g = decompose_graph(_small_loopy_graph(rng))
        sim = simulate_maxproduct_via_fgnn(g, iterations)
        for it, (state, _) in enumerate(iterate_decomposed_max_product(g)):
            if it == iterations:
                break
            ref = [normalize(b, MAX) for b in state.beliefs]
            err = max(err, max(float(np.abs(a - b).max()) for a, b in zip(ref, sim[it])))
    results.append(("maxproduct_simulation", err <= sim_tol, err))
    err = 0.0
    for _ in range(inputs):
        n = int(rng.integers(2, 6))
        dims = [int(d) for d in rng.integers(2, 5, n)]
        rank = int(rng.integers(1, 9))
        cp = CPTensor([rng.random((d, rank)) + 0.01 for d in dims])
        incoming = [rng.random(d) + 0.01 for d in dims]
        target = int(rng.integers(n))
        err = max(err, float(np.abs(hadamard_layer_message(cp, incoming, target)
                                    - lr_factor_to_var(cp, incoming, target)).max()))
    results.append(("hadamard_layer", err <= 1e-9, err))
    return results
