"""Bit error rates of a (96, 3, 6) LDPC code under bursty Gaussian noise.

Compares sum-product, max-sum and a per-bit hard decision across a small
(SNR, burst sigma) grid.  All decoders see the same channel samples.
"""
from fgnn.ldpc import ldpc_decode_eval, ldpc_make_code

code = ldpc_make_code(96, 3, 6, seed=0)
print(f"code n={code.n} k={code.k}")
grid = [(snr, sb) for snr in (0.0, 2.0, 4.0) for sb in (0.0, 3.0)]
rows = ldpc_decode_eval(code, ("sum", "max", "bit"), grid, trials=50, seed=0)
print(f"{'snr':>4} {'sigma_b':>7} {'decoder':>7} {'ber':>9}")
for r in rows:
    print(f"{r['snr_db']:4.1f} {r['sigma_b']:7.1f} {r['decoder']:>7} {r['ber']:9.2e}")
