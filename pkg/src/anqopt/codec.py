"""Prefix-free adaptive encoding of quantization indices.

The integers are partitioned into blocks L_0, L_1, ... with |L_b| = S**b,
where L_b = T_b minus T_{b-1} and T_b is the centred run

    T_b = {-ceil(N_b / 2) + 1, ..., floor(N_b / 2)},  N_b = (S**(b+1) - 1)/(S - 1).

An index in L_b is sent as b information symbols from {1..S} followed by
the terminator 0, so it costs (b + 1) symbols of log2(S + 1) bits each.

Inside a block the members are enumerated in ascending order; the rank is
written in base S with fixed width b, most significant digit first, each
digit shifted by +1 so that 0 stays reserved for the terminator.
"""
from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .quantizer import AnqParams, quant_point, quantize_vector, DETERMINISTIC

TERMINATOR = 0


def _check_S(S: int):
    if int(S) != S or S < 2:
        raise ValueError("S must be an integer >= 2")


@lru_cache(maxsize=4096)
def block_bounds(b: int, S: int) -> tuple[int, int]:
    """Inclusive (lo, hi) of T_b; T_{-1} is empty and reported as (1, 0)."""
    if b < 0:
        return 1, 0
    n = (S ** (b + 1) - 1) // (S - 1)
    return -((n + 1) // 2) + 1, n // 2


def block_members(b: int, S: int) -> list[int]:
    lo, hi = block_bounds(b, S)
    plo, phi = block_bounds(b - 1, S)
    if b == 0:
        return list(range(lo, hi + 1))
    return list(range(lo, plo)) + list(range(phi + 1, hi + 1))


def block_of(ell: int, S: int) -> int:
    ell = int(ell)
    his, neg_los = _bound_lists(S)
    if -neg_los[-1] <= ell <= his[-1]:
        return bisect_left(his, ell) if ell >= 0 else bisect_left(neg_los, -ell)
    b = len(his)
    while True:
        lo, hi = block_bounds(b, S)
        if lo <= ell <= hi:
            return b
        b += 1


@lru_cache(maxsize=64)
def _bound_lists(S: int):
    his, neg_los = [], []
    for b in range(63):
        lo, hi = block_bounds(b, S)
        if hi > 2**62:
            break
        his.append(hi)
        neg_los.append(-lo)
    return his, neg_los


@lru_cache(maxsize=64)
def _bound_tables(S: int):
    his, neg_los = _bound_lists(S)
    return np.array(his, dtype=np.int64), np.array(neg_los, dtype=np.int64)


def block_index(ell, S: int) -> np.ndarray:
    """Vectorized block number b for every index."""
    ell = np.asarray(ell, dtype=np.int64)
    his, neg_los = _bound_tables(S)
    pos = np.searchsorted(his, ell, side="left")
    neg = np.searchsorted(neg_los, -ell, side="left")
    return np.where(ell >= 0, pos, neg)


def symbol_count(ell, S: int) -> np.ndarray:
    """Symbols needed per index (information symbols plus terminator)."""
    return block_index(ell, S) + 1


def bits_per_symbol(S: int) -> float:
    return math.log2(S + 1)


def encode_index(ell: int, S: int) -> list[int]:
    _check_S(S)
    ell = int(ell)
    b = block_of(ell, S)
    if b == 0:
        return [TERMINATOR]
    lo, _ = block_bounds(b, S)
    plo, phi = block_bounds(b - 1, S)
    n_neg = plo - lo
    rank = ell - lo if ell < plo else n_neg + (ell - phi - 1)
    digits = []
    for _ in range(b):
        rank, r = divmod(rank, S)
        digits.append(r + 1)
    return digits[::-1] + [TERMINATOR]


def decode_index(seq, S: int) -> int:
    _check_S(S)
    seq = [int(s) for s in seq]
    if not seq or seq[-1] != TERMINATOR:
        raise ValueError("sequence must end with the terminator 0")
    info = seq[:-1]
    for s in info:
        if s == TERMINATOR:
            raise ValueError("terminator before the end of the sequence")
        if not 1 <= s <= S:
            raise ValueError(f"symbol {s} outside 1..{S}")
    b = len(info)
    if b == 0:
        return 0
    rank = 0
    for s in info:
        rank = rank * S + (s - 1)
    lo, _ = block_bounds(b, S)
    plo, phi = block_bounds(b - 1, S)
    n_neg = plo - lo
    return lo + rank if rank < n_neg else phi + 1 + (rank - n_neg)


def _block_edges(b, S):
    """Vectorized (lo_b, lo_{b-1}, hi_{b-1}) for block numbers inside the tables."""
    his, neg_los = _bound_tables(S)
    lo = -neg_los[b]
    prev = np.maximum(b - 1, 0)
    plo = np.where(b > 0, -neg_los[prev], 1)
    phi = np.where(b > 0, his[prev], 0)
    return lo, plo, phi


def encode_stream(ells, S: int) -> list[int]:
    """Concatenated codewords of all indices (row-major order)."""
    _check_S(S)
    flat = np.ravel(ells)
    his, neg_los = _bound_tables(S)
    if flat.dtype == object or (flat.size and np.abs(flat).max() > min(his[-1], neg_los[-1])):
        out: list[int] = []
        for ell in flat:
            out.extend(encode_index(int(ell), S))
        return out
    ells = flat.astype(np.int64)
    b = block_index(ells, S)
    lo, plo, phi = _block_edges(b, S)
    rank = np.where(ells < plo, ells - lo, (plo - lo) + (ells - phi - 1))
    ends = np.cumsum(b + 1) - 1
    out = np.zeros(int(ends[-1]) + 1 if ells.size else 0, dtype=np.int64)
    # least significant digit sits just before the terminator
    for j in range(int(b.max(initial=0))):
        live = b > j
        rank_l = rank[live]
        out[ends[live] - 1 - j] = rank_l % S + 1
        rank[live] = rank_l // S
    return out.tolist()


def decode_stream(symbols, S: int) -> list[int]:
    """Inverse of encode_stream; raises on malformed or truncated streams."""
    _check_S(S)
    arr = np.asarray(symbols, dtype=np.int64).ravel()
    if arr.size == 0:
        return []
    if arr.min() < 0 or arr.max() > S:
        raise ValueError(f"symbol outside 0..{S}")
    ends = np.flatnonzero(arr == TERMINATOR)
    if not ends.size or ends[-1] != arr.size - 1:
        raise ValueError("stream ends inside a codeword")
    starts = np.concatenate([[0], ends[:-1] + 1])
    b = ends - starts
    his, _ = _bound_tables(S)
    if b.max() >= len(his):
        return [decode_index(arr[a:e + 1], S) for a, e in zip(starts, ends)]
    rank = np.zeros(b.size, dtype=np.int64)
    for j in range(int(b.max())):
        live = b > j
        rank[live] = rank[live] * S + (arr[starts[live] + j] - 1)
    lo, plo, phi = _block_edges(b, S)
    n_neg = plo - lo
    ells = np.where(b == 0, 0, np.where(rank < n_neg, lo + rank, phi + 1 + (rank - n_neg)))
    return ells.tolist()


def bit_cost(seq, S: int) -> float:
    """Bits for one symbol sequence, or for a whole stream."""
    return len(seq) * bits_per_symbol(S)


def vector_bits(ell, S: int) -> float:
    return float(symbol_count(ell, S).sum()) * bits_per_symbol(S)


def bit_bound(x, eta: float, omega: float, S: int, mode: str = DETERMINISTIC) -> float:
    """Upper bound on the bits used to quantize and encode the vector x."""
    x = np.ravel(np.asarray(x, dtype=float))
    d = x.size
    a = np.linalg.norm(x) / math.sqrt(d)
    if omega < 1e-12:
        inner = (a / eta - 1) / 2 if mode == DETERMINISTIC else a / (2 * eta)
    elif mode == DETERMINISTIC:
        lr = math.log1p(omega) - math.log1p(-omega)
        inner = (math.log1p(-omega) + math.log1p(omega * a / eta)) / lr
    else:
        inner = math.log1p(omega * a / eta) / (2 * math.asinh(omega))
    return bits_per_symbol(S) * (3 * d + d * math.log(2 + inner, S))


# wire format ---------------------------------------------------------------

def symbol_width(S: int) -> int:
    """Bits per packed symbol: ceil(log2(S + 1))."""
    return int(S).bit_length()


def pack_symbols(symbols, S: int) -> bytes:
    """Pack one vector's symbol stream, MSB first, zero-padded to a byte."""
    w = symbol_width(S)
    acc, nbits, out = 0, 0, bytearray()
    for s in symbols:
        s = int(s)
        if not 0 <= s <= S:
            raise ValueError(f"symbol {s} outside 0..{S}")
        acc = (acc << w) | s
        nbits += w
        while nbits >= 8:
            nbits -= 8
            out.append((acc >> nbits) & 0xFF)
        acc &= (1 << nbits) - 1
    if nbits:
        out.append((acc << (8 - nbits)) & 0xFF)
    return bytes(out)


def unpack_indices(data: bytes, S: int, d: int) -> list[int]:
    """Read exactly d indices from a packed vector; trailing padding is ignored."""
    w = symbol_width(S)
    total = len(data) * 8
    pos, out, cur = 0, [], []
    value = int.from_bytes(data, "big")
    while len(out) < d:
        if pos + w > total:
            raise ValueError("packed data ends before d indices were read")
        s = (value >> (total - pos - w)) & ((1 << w) - 1)
        pos += w
        cur.append(s)
        if s == TERMINATOR:
            out.append(decode_index(cur, S))
            cur = []
    return out


# differential encoding ------------------------------------------------------

@dataclass
class DiffCodecState:
    c_hat: np.ndarray

    @classmethod
    def zeros(cls, d: int) -> "DiffCodecState":
        return cls(np.zeros(d))


def diff_encode_step(c, state: DiffCodecState, p: AnqParams, rng=None):
    """Quantize the prediction error c - c_hat and advance the estimate.

    Returns (list of per-component symbol sequences, new state).
    """
    c = np.asarray(c, dtype=float)
    if c.shape != state.c_hat.shape:
        raise ValueError(f"dimension mismatch: {c.shape} vs {state.c_hat.shape}")
    ell = quantize_vector(c - state.c_hat, p, rng)
    seqs = [encode_index(int(e), p.S) for e in ell]
    return seqs, DiffCodecState(state.c_hat + quant_point(ell, p))


def diff_decode_step(seqs, state: DiffCodecState, p: AnqParams) -> DiffCodecState:
    ell = np.array([decode_index(s, p.S) for s in seqs], dtype=np.int64)
    if ell.shape != state.c_hat.shape:
        raise ValueError("dimension mismatch")
    return DiffCodecState(state.c_hat + quant_point(ell, p))
