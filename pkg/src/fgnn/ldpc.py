"""LDPC codes, a noisy channel, and BER evaluation of BP decoders.

Codes are random regular parity-check matrices with a systematic encoder
from GF(2) elimination.  The channel adds Gaussian noise plus, with
probability ``eta``, a burst term of scale ``sigma_b``.  Decoding runs BP on
a factor graph of Gaussian-likelihood unaries and even-parity factors;
:func:`decode_batch` is a vectorized equivalent of :func:`fgnn.bp.run_bp`
on that graph for many received words at once.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

import numpy as np

from .bp import MAX, SUM, BpConfig
from .graph import DenseLog, Factor, FactorGraph, ParityLog, build_graph
from .rng import make_rng

ETA = 0.05
SNR_GRID = tuple(range(5))
SIGMA_B_GRID = tuple(range(6))
CSV_HEADER = ("snr_db", "sigma_b", "decoder", "trials", "bit_errors", "ber")
DECODERS = ("sum", "max", "bit")
MODULATIONS = ("bpsk", "bit")


class CodeConstructionError(RuntimeError):
    """No full-rank duplicate-free matrix was found within the redraw budget."""


# -- GF(2) ----------------------------------------------------------------------

def gf2_rref(h: np.ndarray) -> tuple[np.ndarray, list[int]]:
    """Reduced row echelon form over GF(2) and the pivot column of each pivot row."""
    a = (np.asarray(h, dtype=np.uint8) % 2).copy()
    rows, cols = a.shape
    pivots = []
    r = 0
    for c in range(cols):
        if r == rows:
            break
        hit = np.flatnonzero(a[r:, c])
        if hit.size == 0:
            continue
        p = r + hit[0]
        if p != r:
            a[[r, p]] = a[[p, r]]
        others = np.flatnonzero(a[:, c])
        others = others[others != r]
        a[others] ^= a[r]
        pivots.append(c)
        r += 1
    return a[:r], pivots


# -- codes --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LdpcCode:
    """Parity-check code with a systematic encoder.

    ``checks[r]`` lists the columns of row ``r`` of H.  Message bits are
    copied to ``info_cols``; bit ``parity_cols[r]`` is ``parity_map[r] . msg``.
    """

    n: int
    checks: tuple[tuple[int, ...], ...]
    info_cols: tuple[int, ...]
    parity_cols: tuple[int, ...]
    parity_map: np.ndarray

    @property
    def m(self) -> int:
        return len(self.checks)

    @property
    def k(self) -> int:
        return len(self.info_cols)

    @property
    def num_edges(self) -> int:
        return sum(len(r) for r in self.checks)

    @property
    def H(self) -> np.ndarray:
        h = np.zeros((self.m, self.n), dtype=np.uint8)
        for r, cols in enumerate(self.checks):
            h[r, list(cols)] = 1
        return h

    @property
    def column_weights(self) -> np.ndarray:
        return self.H.sum(axis=0)

    def encode(self, msg) -> np.ndarray:
        msg = np.asarray(msg, dtype=np.uint8)
        if msg.shape[-1] != self.k:
            raise ValueError(f"message length {msg.shape[-1]} != k = {self.k}")
        c = np.zeros(msg.shape[:-1] + (self.n,), dtype=np.uint8)
        c[..., list(self.info_cols)] = msg
        c[..., list(self.parity_cols)] = (msg.astype(np.int64) @ self.parity_map.T.astype(np.int64)) % 2
        return c

    def syndrome(self, word) -> np.ndarray:
        return (np.asarray(word, dtype=np.int64) @ self.H.T.astype(np.int64)) % 2

    @classmethod
    def from_parity_matrix(cls, h) -> "LdpcCode":
        h = np.asarray(h, dtype=np.uint8)
        if h.ndim != 2:
            raise ValueError("parity-check matrix must be 2-D")
        if np.any(h > 1):
            raise ValueError("parity-check matrix must be binary")
        rref, pivots = gf2_rref(h)
        info = [c for c in range(h.shape[1]) if c not in set(pivots)]
        pmap = rref[:, info] if info else np.zeros((len(pivots), 0), dtype=np.uint8)
        checks = tuple(tuple(int(c) for c in np.flatnonzero(row)) for row in h)
        pmap = np.array(pmap, dtype=np.uint8)
        pmap.setflags(write=False)
        return cls(int(h.shape[1]), checks, tuple(info), tuple(pivots), pmap)


def _repair_duplicates(rows: np.ndarray, rng: np.random.Generator, max_steps: int) -> bool:
    """Swap sockets between rows until no row repeats a column."""
    m, dc = rows.shape
    for _ in range(max_steps):
        bad = [r for r in range(m) if len(set(rows[r])) < dc]
        if not bad:
            return True
        r = bad[0]
        seen = set()
        s = next(s for s in range(dc) if rows[r, s] in seen or seen.add(rows[r, s]))
        r2, s2 = int(rng.integers(m)), int(rng.integers(dc))
        a, b = rows[r, s], rows[r2, s2]
        if r2 == r or b in rows[r] or a in rows[r2]:
            continue
        rows[r, s], rows[r2, s2] = b, a
    return all(len(set(row)) == dc for row in rows)


def ldpc_make_code(n: int = 96, dv: int = 3, dc: int = 6, seed: int = 0, max_redraws: int = 200) -> LdpcCode:
    """Random (dv, dc)-regular code without repeated edges and with full-rank H.

    Column sockets are shuffled into rows, duplicate columns within a row are
    removed by random socket swaps, and the draw is repeated whenever H is
    rank deficient over GF(2).
    """
    if n <= 0 or dv <= 0 or dc <= 0:
        raise ValueError("n, dv and dc must be positive")
    if (n * dv) % dc:
        raise ValueError("n * dv must be divisible by dc")
    if dc > n:
        raise ValueError("row weight cannot exceed block length")
    m = n * dv // dc
    for attempt in range(max_redraws):
        rng = make_rng(seed, attempt)
        rows = rng.permutation(np.repeat(np.arange(n), dv)).reshape(m, dc)
        if not _repair_duplicates(rows, rng, 50 * m * dc):
            continue
        h = np.zeros((m, n), dtype=np.uint8)
        for r in range(m):
            h[r, rows[r]] = 1
        code = LdpcCode.from_parity_matrix(h)
        if len(code.parity_cols) == m:
            return code
    raise CodeConstructionError(f"no full-rank ({n},{dv},{dc}) code within {max_redraws} draws")


# -- alist ---------------------------------------------------------------------------

def alist_write(h, out: TextIO | None = None) -> str:
    """MacKay alist text for a binary matrix (1-based indices, zero padded)."""
    h = np.asarray(h.H if isinstance(h, LdpcCode) else h, dtype=np.uint8)
    m, n = h.shape
    cols = [np.flatnonzero(h[:, j]) + 1 for j in range(n)]
    rows = [np.flatnonzero(h[i]) + 1 for i in range(m)]
    wc = max((len(c) for c in cols), default=0)
    wr = max((len(r) for r in rows), default=0)

    def padded(idx, width):
        return " ".join(str(int(v)) for v in list(idx) + [0] * (width - len(idx)))

    lines = [f"{n} {m}", f"{wc} {wr}", " ".join(str(len(c)) for c in cols), " ".join(str(len(r)) for r in rows)]
    lines += [padded(c, wc) for c in cols]
    lines += [padded(r, wr) for r in rows]
    text = "\n".join(lines) + "\n"
    if out is not None:
        out.write(text)
    return text


def alist_read(text: str | TextIO) -> np.ndarray:
    """Parity-check matrix from alist text; row and column lists must agree."""
    if not isinstance(text, str):
        text = text.read()
    try:
        nums = [int(t) for t in text.split()]
        n, m, wc, wr = nums[:4]
        pos = 4
        col_w = nums[pos:pos + n]
        pos += n
        row_w = nums[pos:pos + m]
        pos += m
        h = np.zeros((m, n), dtype=np.uint8)
        for j in range(n):
            entries = nums[pos:pos + wc]
            pos += wc
            if len(entries) != wc:
                raise ValueError("truncated column lists")
            idx = [e for e in entries if e]
            if len(idx) != col_w[j]:
                raise ValueError(f"column {j + 1} weight mismatch")
            h[np.array(idx, dtype=np.int64) - 1, j] = 1
        check = np.zeros_like(h)
        for i in range(m):
            entries = nums[pos:pos + wr]
            pos += wr
            if len(entries) != wr:
                raise ValueError("truncated row lists")
            idx = [e for e in entries if e]
            if len(idx) != row_w[i]:
                raise ValueError(f"row {i + 1} weight mismatch")
            check[i, np.array(idx, dtype=np.int64) - 1] = 1
    except (IndexError, ValueError) as exc:
        raise ValueError(f"malformed alist: {exc}") from None
    if pos != len(nums):
        raise ValueError("malformed alist: trailing data")
    if not np.array_equal(h, check):
        raise ValueError("malformed alist: row and column lists disagree")
    return h


# -- channel -------------------------------------------------------------------------

def snr_to_sigma(snr_db: float) -> float:
    """Noise scale with ``snr_db = 20 log10(1 / sigma)``."""
    return float(10.0 ** (-snr_db / 20.0))


def symbols(bits, modulation: str = "bpsk") -> np.ndarray:
    """BPSK maps 0 -> +1 and 1 -> -1; ``bit`` sends the bit value itself."""
    bits = np.asarray(bits, dtype=np.float64)
    if modulation == "bpsk":
        return 1.0 - 2.0 * bits
    if modulation == "bit":
        return bits
    raise ValueError(f"unknown modulation {modulation!r}")


@dataclass(frozen=True, eq=False)
class ChannelSample:
    message: np.ndarray
    clean: np.ndarray        # transmitted codeword bits
    noisy: np.ndarray        # received reals
    snr_db: float
    sigma_b: float
    eta: float
    seed: int
    modulation: str = "bpsk"

    @property
    def sigma(self) -> float:
        return snr_to_sigma(self.snr_db)


def ldpc_channel_sample(code: LdpcCode, snr_db: float, sigma_b: float, seed: int,
                        modulation: str = "bpsk", eta: float = ETA, keys: Sequence[int] = ()) -> ChannelSample:
    """``noisy = s(clean) + n + 1[u <= eta] z`` with n ~ N(0, sigma^2), z ~ N(0, sigma_b^2), u ~ U[0,1).

    Draw order: message bits, n, u, z.
    """
    if sigma_b < 0:
        raise ValueError("sigma_b must be non-negative")
    rng = make_rng(seed, *keys)
    msg = rng.integers(0, 2, size=code.k).astype(np.uint8)
    clean = code.encode(msg)
    sigma = snr_to_sigma(snr_db)
    noise = sigma * rng.standard_normal(code.n)
    burst = rng.random(code.n) <= eta
    z = sigma_b * rng.standard_normal(code.n)
    noisy = symbols(clean, modulation) + noise + np.where(burst, z, 0.0)
    return ChannelSample(msg, clean, noisy, float(snr_db), float(sigma_b), float(eta), int(seed), modulation)


def channel_log_likelihood(noisy, snr_db: float, modulation: str = "bpsk") -> np.ndarray:
    """Unary log-potentials ``log N(noisy; s(b), sigma^2)`` up to a constant, shape (..., n, 2)."""
    y = np.asarray(noisy, dtype=np.float64)[..., None]
    s = symbols(np.array([0, 1]), modulation)
    return -((y - s) ** 2) / (2.0 * snr_to_sigma(snr_db) ** 2)


def ldpc_graph(code: LdpcCode, unary_log: np.ndarray) -> FactorGraph:
    """Unary factor per bit (ids 0..n-1) followed by one parity factor per check."""
    unary_log = np.asarray(unary_log, dtype=np.float64)
    factors = [Factor(i, (i,), DenseLog(unary_log[i])) for i in range(code.n)]
    factors += [Factor(code.n + r, tuple(cols), ParityLog()) for r, cols in enumerate(code.checks)]
    return build_graph([2] * code.n, factors)


# -- vectorized decoding ----------------------------------------------------------------

@dataclass
class BatchDecodeResult:
    bits: np.ndarray         # (B, n) hard decisions
    beliefs: np.ndarray      # (B, n, 2) normalized beliefs
    iterations: np.ndarray   # (B,)
    converged: np.ndarray    # (B,)


def _exclusive(values: np.ndarray, op, start) -> np.ndarray:
    """For each slot t along axis 1, ``op``-fold of ``start`` and the other slots in order.

    The left-to-right fold matches the generic BP update's accumulation
    order, so results agree bitwise (ties in min-sum then break the same way).
    """
    w = values.shape[1]
    out = []
    for t in range(w):
        acc = start
        for j in range(w):
            if j != t:
                acc = op(acc, values[:, j])
        out.append(np.broadcast_to(acc, values[:, 0].shape))
    return np.stack(out, axis=1)


def _fold(values: np.ndarray, op, start) -> np.ndarray:
    acc = start
    for j in range(values.shape[1]):
        acc = op(acc, values[:, j])
    return acc


def _norm_sum(v: np.ndarray) -> np.ndarray:
    s = v.sum(axis=-1, keepdims=True)
    ok = (s > 0) & np.isfinite(s)
    return np.where(ok, v / np.where(ok, s, 1.0), 0.5)


def _norm_max(v: np.ndarray) -> np.ndarray:
    m = v.max(axis=-1, keepdims=True)
    ok = np.isfinite(m)
    return np.where(ok, v - np.where(ok, m, 0.0), 0.0)


class _Wiring:
    """Edge layouts of a code: by check (padded rows) and by bit (padded columns)."""

    def __init__(self, code: LdpcCode):
        self.n = code.n
        edges = [(r, c) for r, cols in enumerate(code.checks) for c in cols]
        self.edge_var = np.array([c for _, c in edges], dtype=np.int64)
        self.num_edges = len(edges)
        wr = max(len(c) for c in code.checks)
        self.check_slots = np.full((code.m, wr), -1, dtype=np.int64)
        k = 0
        for r, cols in enumerate(code.checks):
            self.check_slots[r, :len(cols)] = np.arange(k, k + len(cols))
            k += len(cols)
        per_var = [[] for _ in range(code.n)]
        for e, (_, c) in enumerate(edges):
            per_var[c].append(e)
        wc = max((len(p) for p in per_var), default=1) or 1
        self.var_slots = np.full((code.n, wc), -1, dtype=np.int64)
        for c, es in enumerate(per_var):
            self.var_slots[c, :len(es)] = es


def _gather(edge_vals: np.ndarray, slots: np.ndarray, fill) -> np.ndarray:
    """(B, E, 2) -> (B*rows, width, 2) with ``fill`` in padded slots."""
    b = edge_vals.shape[0]
    safe = np.where(slots < 0, 0, slots)
    out = edge_vals[:, safe]                                   # (B, rows, width, 2)
    out = np.where((slots < 0)[None, :, :, None], fill, out)
    return out.reshape((-1,) + out.shape[2:])


def _scatter(values: np.ndarray, slots: np.ndarray, b: int, num_edges: int) -> np.ndarray:
    """Inverse of :func:`_gather` (padded slots dropped)."""
    values = values.reshape((b,) + slots.shape + values.shape[2:])
    out = np.zeros((b, num_edges) + values.shape[3:])
    mask = slots >= 0
    out[:, slots[mask]] = values[:, mask]
    return out


def _parity_out(incoming: np.ndarray, mode: str) -> np.ndarray:
    """Parity factor messages for all slots; ``incoming`` (rows, width, 2), padded slots neutral."""
    if mode == SUM:
        s = incoming.sum(axis=-1)
        ratio = np.where(s > 0, (incoming[..., 0] - incoming[..., 1]) / np.where(s > 0, s, 1.0), 0.0)
        prod = _exclusive(ratio, np.multiply, np.ones(ratio.shape[:1]))
        return _norm_sum(np.stack([0.5 * (1.0 + prod), 0.5 * (1.0 - prod)], axis=-1))
    best = (incoming[..., 1] > incoming[..., 0]).astype(np.int64)
    base = np.take_along_axis(incoming, best[..., None], axis=-1)[..., 0]
    flip = np.abs(incoming[..., 0] - incoming[..., 1])
    rows = incoming.shape[:1]
    odd = _exclusive(best, np.bitwise_xor, np.zeros(rows, dtype=np.int64))
    base = _exclusive(base, np.add, np.zeros(rows))
    flip = _exclusive(flip, np.minimum, np.full(rows, np.inf))
    even = np.stack([base, base - flip], axis=-1)
    return _norm_max(np.where((odd == 1)[..., None], even[..., ::-1], even))


def decode_batch(code: LdpcCode, unary_log: np.ndarray, mode: str = SUM,
                 config: BpConfig | None = None) -> BatchDecodeResult:
    """Flooding BP on the code's factor graph for a batch of received words.

    Follows the same schedule, normalization and stopping rule as
    :func:`fgnn.bp.run_bp` with the parity fast path: every word stops at
    the first iteration whose largest message change is below ``tol``.
    In sum mode unary factors exchange messages like any other factor; in
    max mode they enter as the variable's own term.
    """
    cfg = config or BpConfig(mode=mode)
    if cfg.damping != 0.0 or not cfg.normalize:
        raise ValueError("decode_batch supports the undamped normalized schedule only")
    theta = np.asarray(unary_log, dtype=np.float64)
    if theta.ndim == 2:
        theta = theta[None]
    b = theta.shape[0]
    w = _Wiring(code)
    E = w.num_edges
    if mode == SUM:
        unary_msg = _norm_sum(np.exp(theta - theta.max(axis=-1, keepdims=True)))
        init = np.full(2, 0.5)
        v_fill, c_fill, mult = 1.0, np.array([1.0, 0.0]), True
    elif mode == MAX:
        unary_msg = theta
        init = np.zeros(2)
        v_fill, c_fill, mult = 0.0, np.array([0.0, -np.inf]), False   # neutral: even, free, never flipped
    else:
        raise ValueError(f"unknown mode {mode!r}")
    # state: v2c, c2v on edges; in sum mode also var->unary and unary->var messages
    v2c = np.broadcast_to(init, (b, E, 2)).copy()
    c2v = v2c.copy()
    v2u = np.broadcast_to(init, (b, code.n, 2)).copy()
    u2v = v2u.copy()
    iterations = np.zeros(b, dtype=np.int64)
    converged = np.zeros(b, dtype=bool)
    active = np.arange(b)
    for _ in range(cfg.max_iterations):
        if active.size == 0:
            break
        nb = active.size
        old_v2c, old_c2v, old_u2v, old_v2u = v2c[active], c2v[active], u2v[active], v2u[active]
        by_var = _gather(old_c2v, w.var_slots, v_fill)                       # (nb*n, wc, 2)
        if mult:
            # the unary factor has the lowest id, so it comes first in the product
            new_v2c = _norm_sum(_exclusive(by_var, np.multiply, np.ones((len(by_var), 2)) * old_u2v.reshape(-1, 2)))
            new_v2u = _norm_sum(_fold(by_var, np.multiply, np.ones((len(by_var), 2)))).reshape(nb, code.n, 2)
            new_u2v = unary_msg[active]
        else:
            new_v2c = _norm_max(_exclusive(by_var, np.add, theta[active].reshape(-1, 2)))
            new_v2u, new_u2v = old_v2u, old_u2v
        new_v2c = _scatter(new_v2c, w.var_slots, nb, E)
        by_check = _gather(new_v2c, w.check_slots, c_fill)
        new_c2v = _scatter(_parity_out(by_check, mode), w.check_slots, nb, E)
        delta = np.zeros(nb)
        for new, old in ((new_v2c, old_v2c), (new_c2v, old_c2v), (new_v2u, old_v2u), (new_u2v, old_u2v)):
            with np.errstate(invalid="ignore"):
                diff = np.abs(np.where(new == old, 0.0, new - old))
            delta = np.maximum(delta, np.nan_to_num(diff, nan=np.inf).reshape(nb, -1).max(axis=1))
        v2c[active], c2v[active], u2v[active], v2u[active] = new_v2c, new_c2v, new_u2v, new_v2u
        iterations[active] += 1
        done = delta < cfg.tol
        converged[active[done]] = True
        active = active[~done]
    by_var = _gather(c2v, w.var_slots, v_fill)
    if mode == SUM:
        bel = _norm_sum(_fold(by_var, np.multiply, np.ones((len(by_var), 2)) * u2v.reshape(-1, 2)))
    else:
        bel = _norm_max(_fold(by_var, np.add, theta.reshape(-1, 2)))
    bel = bel.reshape(b, code.n, 2)
    bits = np.argmax(bel, axis=-1).astype(np.uint8)
    return BatchDecodeResult(bits, bel, iterations, converged)


def hard_decision(unary_log: np.ndarray) -> np.ndarray:
    """Per-bit threshold baseline: the likelier bit, ties to 0."""
    return np.argmax(np.asarray(unary_log), axis=-1).astype(np.uint8)


# -- sweeps ------------------------------------------------------------------------------

def full_grid() -> list[tuple[float, float]]:
    return [(s, b) for s in SNR_GRID for b in SIGMA_B_GRID]


def ldpc_decode_eval(code: LdpcCode, decoders: Iterable[str] = ("sum", "max", "bit"),
                     grid: Sequence[tuple[float, float]] | None = None, trials: int = 100, seed: int = 0,
                     modulation: str = "bpsk", config: BpConfig | None = None) -> list[dict]:
    """BER rows, one per (grid point, decoder) in grid order.

    Trial ``t`` at grid point ``g`` draws its channel sample from seed keys
    ``(seed, g, t)``; every decoder sees the same samples.
    """
    decoders = list(decoders)
    for d in decoders:
        if d not in DECODERS:
            raise ValueError(f"unknown decoder {d!r}")
    if trials <= 0:
        raise ValueError("trials must be positive")
    rows = []
    for gi, (snr, sb) in enumerate(full_grid() if grid is None else grid):
        samples = [ldpc_channel_sample(code, snr, sb, seed, modulation, keys=(gi, t)) for t in range(trials)]
        clean = np.stack([s.clean for s in samples])
        theta = channel_log_likelihood(np.stack([s.noisy for s in samples]), snr, modulation)
        for d in decoders:
            if d == "bit":
                bits = hard_decision(theta)
            else:
                mode = SUM if d == "sum" else MAX
                cfg = BpConfig(mode=mode, max_iterations=(config.max_iterations if config else 100),
                               tol=(config.tol if config else 1e-9))
                bits = decode_batch(code, theta, mode, cfg).bits
            errors = int(np.sum(bits != clean))
            total = trials * code.n
            rows.append({"snr_db": snr, "sigma_b": sb, "decoder": d, "trials": trials,
                         "bit_errors": errors, "ber": errors / total})
    return rows


def rows_to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in rows:
        writer.writerow([_num(r["snr_db"]), _num(r["sigma_b"]), r["decoder"], r["trials"], r["bit_errors"],
                         repr(float(r["ber"]))])
    return buf.getvalue()


def _num(x) -> str:
    x = float(x)
    return str(int(x)) if x.is_integer() else repr(x)
