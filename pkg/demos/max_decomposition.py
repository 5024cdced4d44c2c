"""Rewriting a max-potential as a max over an auxiliary variable.

Any log-table f(x_1..x_n) can be written as max_z sum_i g_i(x_i, z) once it
is shifted to have minimum 1.  Max-product on the rewritten graph decodes
the same assignment as dense max-product.
"""
import numpy as np

from fgnn.bp import MAX, BpConfig, decode_map_from_beliefs, run_bp
from fgnn.graph import DenseLog, Factor, build_graph
from fgnn.maxdecomp import decompose_graph, decompose_max, reconstruct_max, run_decomposed_max_product
from fgnn.rng import make_rng

rng = make_rng(2)
table = rng.standard_normal((2, 3, 2))
md = decompose_max(table)
print(f"table shape {table.shape} -> {len(md.tables)} tables of shape {[t.shape for t in md.tables]}, "
      f"shift {md.shift:.3f}")
print(f"reconstruction error {np.abs(reconstruct_max(md) - (table + md.shift)).max():.1e}")

# a 4-cycle with one triple factor
factors = [Factor(i, [i], DenseLog(rng.standard_normal(2))) for i in range(4)]
for scope in ([0, 1], [1, 2], [2, 3], [0, 3], [0, 1, 2]):
    factors.append(Factor(len(factors), scope, DenseLog(rng.standard_normal((2,) * len(scope)))))
g = build_graph([2] * 4, factors)

dense = decode_map_from_beliefs(run_bp(g, BpConfig(mode=MAX)).beliefs)
dec = run_decomposed_max_product(decompose_graph(g))
print("dense decode", dense, "decomposed decode", dec.decode)
