"""Low-rank factor messages versus the dense computation.

A factor stored as a CP tensor (sum of rank-one terms) sends messages in
time linear in the arity instead of exponential.  The result is the same
message the dense table would send.
"""
import numpy as np

from fgnn.bp import SUM, dense_factor_message
from fgnn.lowrank import lr_factor_to_var
from fgnn.rng import make_rng
from fgnn.tensor import CPTensor, densify

rng = make_rng(1)
shape, rank = (3, 4, 2, 3, 2), 4
cp = CPTensor([rng.uniform(0.1, 1.0, (d, rank)) for d in shape])
incoming = [rng.uniform(0.1, 1.0, d) for d in shape]
table = densify(cp)
print(f"arity {len(shape)}, rank {rank}: {table.size} dense entries vs {sum(shape) * rank} CP entries")

for t in range(len(shape)):
    fast = lr_factor_to_var(cp, incoming, t)
    dense = dense_factor_message(table, [m if j != t else None for j, m in enumerate(incoming)], t, SUM)
    dense = dense / dense.sum()
    print(f"  to slot {t}: {np.round(fast, 5)}  max diff {np.abs(fast - dense).max():.1e}")
