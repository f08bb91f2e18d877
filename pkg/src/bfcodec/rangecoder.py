"""Deterministic 32-bit arithmetic (range) coder driven by static tables.

Probabilities are quantized to 16-bit fixed point (frequencies summing to
exactly 65536 per context); the quantized tables are the normative ones
shared by encoder and decoder.  State is 32 bits wide with bit-wise
renormalization and underflow counting, so dyadic probabilities cost
exactly their ideal code length.

The kernels operate on flat symbol/context arrays so whole frames can be
coded per call; they are numba-compiled and shared with the frame decoder
in local_codec.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .errors import SymbolError, TruncatedBitstream

TOTAL = 65536          # fixed-point 1.0
_FULL = (1 << 32) - 1
_HALF = 1 << 31
_QUARTER = 1 << 30

OK = 0
ERR_TRUNCATED = 1
ERR_OVERFLOW = 2
ERR_BAD_SYMBOL = 3

# Decoder may legitimately read a little past the payload (state width plus
# flush); anything further means the bitstream was cut short.
READAHEAD_BITS = 64


@njit(cache=True, inline="always")
def _put_bit(out, nbits, bit):
    out[nbits >> 3] |= bit << (7 - (nbits & 7))
    return nbits + 1


@njit(cache=True, inline="always")
def _enc_sym(out, cap_bits, low, high, pending, nbits, cl, ch):
    """Encode one symbol interval [cl, ch) / TOTAL.  Returns updated state."""
    span = high - low + 1
    high = low + ((span * ch) >> 16) - 1
    low = low + ((span * cl) >> 16)
    while True:
        if (low ^ high) & _HALF == 0:
            bit = (low >> 31) & 1
            if nbits + 1 + pending > cap_bits:
                return low, high, pending, nbits, ERR_OVERFLOW
            nbits = _put_bit(out, nbits, bit)
            inv = bit ^ 1
            while pending > 0:
                nbits = _put_bit(out, nbits, inv)
                pending -= 1
            low = (low << 1) & _FULL
            high = ((high << 1) & _FULL) | 1
        elif low & ~high & _QUARTER != 0:
            pending += 1
            low = (low << 1) & (_FULL >> 1)
            high = ((high << 1) & (_FULL >> 1)) | _HALF | 1
        else:
            break
    return low, high, pending, nbits, OK


@njit(cache=True)
def _enc_finish(out, cap_bits, low, high, pending, nbits):
    # one '1' bit pins the final interval; decoder zero-extends past the end
    if nbits + 1 + pending > cap_bits:
        return nbits, ERR_OVERFLOW
    nbits = _put_bit(out, nbits, 1)
    while pending > 0:
        nbits = _put_bit(out, nbits, 0)
        pending -= 1
    return nbits, OK


@njit(cache=True)
def _encode_kernel(symbols, contexts, cumfreq, out, cap_bits, marks, markbits):
    low = 0
    high = _FULL
    pending = 0
    nbits = 0
    mi = 0
    for i in range(symbols.shape[0]):
        while mi < marks.shape[0] and marks[mi] == i:
            markbits[mi] = nbits + pending
            mi += 1
        c = contexts[i]
        s = symbols[i]
        cl = np.int64(cumfreq[c, s])
        ch = np.int64(cumfreq[c, s + 1])
        if ch <= cl:
            return ERR_BAD_SYMBOL, nbits
        low, high, pending, nbits, ok = _enc_sym(out, cap_bits, low, high, pending, nbits, cl, ch)
        if ok != OK:
            return ok, nbits
    while mi < marks.shape[0]:
        markbits[mi] = nbits + pending
        mi += 1
    nbits, ok = _enc_finish(out, cap_bits, low, high, pending, nbits)
    return ok, nbits


@njit(cache=True, inline="always")
def _get_bit(data, navail, pos):
    if pos < navail:
        return np.int64((data[pos >> 3] >> (7 - (pos & 7))) & 1)
    return np.int64(0)


@njit(cache=True, inline="always")
def _dec_init(data, navail):
    code = 0
    pos = 0
    for _ in range(32):
        code = (code << 1) | _get_bit(data, navail, pos)
        pos += 1
    return 0, _FULL, code, pos


@njit(cache=True, inline="always")
def _dec_sym(data, navail, allow, low, high, code, pos, cumfreq, ctx, alen):
    span = high - low + 1
    value = ((code - low + 1) * TOTAL - 1) // span
    lo = 0
    hi = alen
    while hi - lo > 1:
        mid = (lo + hi) >> 1
        if np.int64(cumfreq[ctx, mid]) > value:
            hi = mid
        else:
            lo = mid
    s = lo
    cl = np.int64(cumfreq[ctx, s])
    ch = np.int64(cumfreq[ctx, s + 1])
    high = low + ((span * ch) >> 16) - 1
    low = low + ((span * cl) >> 16)
    while True:
        if (low ^ high) & _HALF == 0:
            code = ((code << 1) & _FULL) | _get_bit(data, navail, pos)
            pos += 1
            low = (low << 1) & _FULL
            high = ((high << 1) & _FULL) | 1
        elif low & ~high & _QUARTER != 0:
            code = (code & _HALF) | ((code << 1) & (_FULL >> 1)) | _get_bit(data, navail, pos)
            pos += 1
            low = (low << 1) & (_FULL >> 1)
            high = ((high << 1) & (_FULL >> 1)) | _HALF | 1
        else:
            break
    if pos > allow:
        return s, low, high, code, pos, ERR_TRUNCATED
    return s, low, high, code, pos, OK


@njit(cache=True)
def _decode_kernel(data, navail, count, contexts, chain_base, chain, cumfreq, alens, out):
    """Decode `count` symbols.  chain=0: ctx = contexts[i]; chain=1: ctx = chain_base[i] + prev."""
    allow = navail + READAHEAD_BITS
    low, high, code, pos = _dec_init(data, navail)
    prev = 0
    for i in range(count):
        ctx = chain_base[i] + prev if chain == 1 else contexts[i]
        s, low, high, code, pos, ok = _dec_sym(
            data, navail, allow, low, high, code, pos, cumfreq, ctx, alens[ctx]
        )
        if ok != OK:
            return ok
        out[i] = s
        prev = s
    return OK


# --- Python-side table construction and wrappers ------------------------------

def quantize_probs(probs: np.ndarray) -> np.ndarray:
    """Quantize a probability vector to integer frequencies summing to TOTAL.

    Every entry gets frequency >= 1; the residual after flooring is settled
    on the largest cells (ties to the lowest index), deterministically.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.shape[0] < 1:
        raise ValueError("probs must be a non-empty 1-D array")
    if p.shape[0] > TOTAL:
        raise ValueError(f"alphabet {p.shape[0]} exceeds fixed-point resolution")
    if np.any(p < 0) or not np.isfinite(p).all():
        raise ValueError("probabilities must be finite and non-negative")
    f = np.maximum(1, np.floor(p * TOTAL)).astype(np.int64)
    diff = TOTAL - int(f.sum())
    while diff != 0:
        if diff > 0:
            i = int(np.argmax(f))
            f[i] += diff
            diff = 0
        else:
            i = int(np.argmax(f))
            take = min(-diff, int(f[i]) - 1)
            if take == 0:
                raise ValueError("cannot quantize: alphabet too large for TOTAL")
            f[i] -= take
            diff += take
    return f.astype(np.uint32)


def build_cumfreq(freq_rows: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Stack per-context frequency rows into the padded cumulative matrix.

    Returns (cumfreq, alens): cumfreq[c, s] is the cumulative frequency
    before symbol s, padded with TOTAL beyond each row's alphabet.
    """
    amax = max(len(r) for r in freq_rows)
    n = len(freq_rows)
    cum = np.full((n, amax + 1), TOTAL, dtype=np.uint32)
    alens = np.empty(n, dtype=np.int64)
    for c, row in enumerate(freq_rows):
        row = np.asarray(row, dtype=np.uint64)
        if int(row.sum()) != TOTAL or np.any(row == 0):
            raise ValueError(f"context {c}: frequencies must be positive and sum to {TOTAL}")
        cum[c, 0] = 0
        cum[c, 1:len(row) + 1] = np.cumsum(row)
        alens[c] = len(row)
    return cum, alens


FAIR_BIT_FREQS = np.array([TOTAL // 2, TOTAL // 2], dtype=np.uint32)


def _out_buffer(n_symbols: int) -> tuple[np.ndarray, int]:
    cap_bits = 17 * n_symbols + 512
    return np.zeros(cap_bits // 8 + 1, dtype=np.uint8), cap_bits


def encode_symbols(symbols, contexts, cumfreq, alens, marks=None):
    """Range-encode symbols under per-symbol contexts.

    Returns (payload bytes, total_bits, markbits) where markbits[i] is the
    coder's bit position when `marks[i]` symbols had been encoded.
    """
    symbols = np.ascontiguousarray(symbols, dtype=np.int64)
    contexts = np.ascontiguousarray(contexts, dtype=np.int64)
    if symbols.shape != contexts.shape:
        raise ValueError("symbols and contexts must have equal length")
    if symbols.size and (symbols.min() < 0 or np.any(symbols >= alens[contexts])):
        bad = int(np.flatnonzero((symbols < 0) | (symbols >= alens[contexts]))[0])
        raise SymbolError(
            f"symbol {int(symbols[bad])} outside alphabet {int(alens[contexts[bad]])} "
            f"of context {int(contexts[bad])} (position {bad})"
        )
    marks_arr = np.ascontiguousarray(marks if marks is not None else [], dtype=np.int64)
    markbits = np.zeros(marks_arr.shape[0], dtype=np.int64)
    out, cap_bits = _out_buffer(symbols.shape[0])
    status, nbits = _encode_kernel(symbols, contexts, cumfreq, out, cap_bits, marks_arr, markbits)
    if status == ERR_BAD_SYMBOL:
        raise SymbolError("zero-width symbol interval")
    if status != OK:
        raise RuntimeError(f"range encoder failure (status {status})")
    nbytes = (nbits + 7) // 8
    return out[:nbytes].tobytes(), int(nbits), markbits


_EMPTY_I64 = np.zeros(0, dtype=np.int64)


def decode_symbols(data: bytes, count: int, contexts, cumfreq, alens) -> np.ndarray:
    """Inverse of encode_symbols for explicit per-symbol contexts."""
    contexts = np.ascontiguousarray(contexts, dtype=np.int64)
    if contexts.shape[0] != count:
        raise ValueError("contexts must cover every symbol")
    buf = np.frombuffer(data, dtype=np.uint8)
    out = np.zeros(count, dtype=np.int64)
    status = _decode_kernel(buf, 8 * len(data), count, contexts, _EMPTY_I64, 0, cumfreq, alens, out)
    if status == ERR_TRUNCATED:
        raise TruncatedBitstream(f"bitstream exhausted after {len(data)} bytes")
    if status != OK:
        raise RuntimeError(f"range decoder failure (status {status})")
    return out


def decode_symbols_chain(data: bytes, count: int, chain_base, cumfreq, alens) -> np.ndarray:
    """Decode with context = chain_base[i] + previously decoded symbol (0 at start)."""
    chain_base = np.ascontiguousarray(chain_base, dtype=np.int64)
    if chain_base.shape[0] != count:
        raise ValueError("chain_base must cover every symbol")
    buf = np.frombuffer(data, dtype=np.uint8)
    out = np.zeros(count, dtype=np.int64)
    status = _decode_kernel(buf, 8 * len(data), count, _EMPTY_I64, chain_base, 1, cumfreq, alens, out)
    if status == ERR_TRUNCATED:
        raise TruncatedBitstream(f"bitstream exhausted after {len(data)} bytes")
    if status != OK:
        raise RuntimeError(f"range decoder failure (status {status})")
    return out
