"""Small graph builders shared by the test modules."""
import numpy as np

from fgnn.graph import CP, DenseLog, Factor, build_graph
from fgnn.tensor import CPTensor


def random_tree(rng, n, card=2, scale=1.0):
    """Random tree over ``n`` variables with N(0, scale^2) unary and pairwise log-tables."""
    factors = [Factor(i, [i], DenseLog(scale * rng.standard_normal(card))) for i in range(n)]
    for child in range(1, n):
        par = int(rng.integers(0, child))
        factors.append(Factor(len(factors), [par, child], DenseLog(scale * rng.standard_normal((card, card)))))
    return build_graph([card] * n, factors)


def random_loopy(rng, n=6, extra=3, card=2, triple=True):
    """Cycle plus random chords, optional triple factor, random unaries."""
    factors = [Factor(i, [i], DenseLog(rng.standard_normal(card))) for i in range(n)]
    pairs = {tuple(sorted((i, (i + 1) % n))) for i in range(n)}
    target = min(len(pairs) + extra, n * (n - 1) // 2)
    while len(pairs) < target:
        a, b = sorted(int(v) for v in rng.choice(n, 2, replace=False))
        pairs.add((a, b))
    for a, b in sorted(pairs):
        factors.append(Factor(len(factors), [a, b], DenseLog(rng.standard_normal((card, card)))))
    if triple:
        scope = sorted(int(v) for v in rng.choice(n, 3, replace=False))
        factors.append(Factor(len(factors), scope, DenseLog(rng.standard_normal((card,) * 3))))
    return build_graph([card] * n, factors)


def random_cp(rng, shape, rank, low=0.1):
    return CPTensor([rng.uniform(low, 1.0, size=(d, rank)) for d in shape])


def cp_tree(rng, n, card=2, rank=2):
    factors = [Factor(i, [i], DenseLog(rng.standard_normal(card))) for i in range(n)]
    for child in range(1, n):
        par = int(rng.integers(0, child))
        factors.append(Factor(len(factors), [par, child], CP(random_cp(rng, (card, card), rank))))
    return build_graph([card] * n, factors)
