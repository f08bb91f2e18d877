"""Dexel statistics, entropy measures, greedy coding order, and symbol tables.

Binary descriptors are modeled as a first-order Markov source over a
learned ordering of the dexels: the first position is coded from its
marginal, every later position conditioned on the previous one.  Counts
are smoothed with add-1 on the joint cells (marginals inherit +2 / +4 on
the denominator) so all coding probabilities are strictly inside (0, 1)
and conditional entropies never exceed their marginals.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rangecoder as rc
from .errors import EmptyTrainingSet, InvalidPair


def entropy(p0: float, p1: float) -> float:
    """Binary entropy in bits; 0*log(0) is taken as 0."""
    if p0 < 0 or p1 < 0 or abs(p0 + p1 - 1.0) > 1e-9:
        raise ValueError(f"({p0}, {p1}) is not a binary distribution")
    h = 0.0
    for p in (p0, p1):
        if p > 0.0:
            h -= p * np.log2(p)
    return float(h)


@dataclass
class DexelStats:
    """Exact marginal and pairwise joint counts over a descriptor sample.

    marginal[j, v] counts descriptors with dexel j equal to v; pairs[j1,
    j2, x, y] counts descriptors with (dexel j1, dexel j2) = (x, y).
    """

    P: int
    sample_count: int
    marginal: np.ndarray          # (P, 2) int64
    pairs: np.ndarray             # (P, P, 2, 2) int64

    @classmethod
    def from_matrix(cls, descriptors: np.ndarray) -> "DexelStats":
        d = np.asarray(descriptors)
        if d.ndim != 2 or d.shape[0] == 0:
            raise EmptyTrainingSet("need at least one descriptor")
        s, p = d.shape
        df = d.astype(np.float64)
        ones = df.sum(axis=0)
        n11 = df.T @ df
        n10 = ones[:, None] - n11
        n01 = ones[None, :] - n11
        n00 = s - n11 - n10 - n01
        pairs = np.empty((p, p, 2, 2), dtype=np.int64)
        pairs[:, :, 0, 0] = np.rint(n00)
        pairs[:, :, 0, 1] = np.rint(n01)
        pairs[:, :, 1, 0] = np.rint(n10)
        pairs[:, :, 1, 1] = np.rint(n11)
        marginal = np.stack([s - ones, ones], axis=1).astype(np.int64)
        return cls(P=p, sample_count=s, marginal=marginal, pairs=pairs)

    def merge(self, other: "DexelStats") -> "DexelStats":
        if self.P != other.P:
            raise ValueError(f"cannot merge stats with P {self.P} != {other.P}")
        return DexelStats(
            P=self.P,
            sample_count=self.sample_count + other.sample_count,
            marginal=self.marginal + other.marginal,
            pairs=self.pairs + other.pairs,
        )

    __add__ = merge

    # Exact frequencies drive the entropy measurements and the greedy order.
    def exact_marginal(self, j: int) -> np.ndarray:
        return self.marginal[j] / max(self.sample_count, 1)

    def exact_pair(self, j1: int, j2: int) -> np.ndarray:
        return self.pairs[j1, j2] / max(self.sample_count, 1)

    # Smoothing (coding tables only): +1 per joint cell; marginals are the
    # exact marginalization of every smoothed joint, hence +2 over S + 4.
    def smoothed_marginal(self, j: int) -> np.ndarray:
        return (self.marginal[j] + 2.0) / (self.sample_count + 4.0)

    def smoothed_pair(self, j1: int, j2: int) -> np.ndarray:
        return (self.pairs[j1, j2] + 1.0) / (self.sample_count + 4.0)


def estimate_dexel_stats(source) -> DexelStats:
    """Count dexel statistics from a FeatureStream, frame list, or bit matrix."""
    if isinstance(source, np.ndarray):
        return DexelStats.from_matrix(source)
    frames = source.frames if hasattr(source, "frames") else source
    mats = [fr.descriptor_matrix() for fr in frames if len(fr) > 0]
    if not mats:
        raise EmptyTrainingSet("no descriptors in source")
    return DexelStats.from_matrix(np.concatenate(mats, axis=0))


def _plogp(p: np.ndarray) -> np.ndarray:
    """Elementwise -p*log2(p) with 0*log(0) = 0."""
    safe = np.where(p > 0.0, p, 1.0)
    return -p * np.log2(safe)


def marginal_entropy(stats: DexelStats, j: int) -> float:
    p = stats.exact_marginal(j)
    return entropy(float(p[0]), float(p[1]))


def conditional_entropy(stats: DexelStats, j1: int, j2: int) -> float:
    """H(dexel j1 | dexel j2) in bits from exact counts (0*log0 = 0)."""
    if j1 == j2:
        raise InvalidPair(f"conditional entropy of dexel {j1} given itself")
    if stats.sample_count < 1:
        raise EmptyTrainingSet("empty statistics")
    joint = stats.exact_pair(j1, j2)             # [x, y] = P(j1=x, j2=y)
    py = joint.sum(axis=0)                       # marginal of the context dexel
    h = float(_plogp(joint).sum() - _plogp(py).sum())
    return max(h, 0.0)


def _entropies_given(stats: DexelStats, prev: int) -> np.ndarray:
    """Vector of H(j | prev) for every j (value at j = prev is meaningless)."""
    joint = stats.pairs[:, prev] / max(stats.sample_count, 1)           # (P, 2, 2)
    h_joint = _plogp(joint).sum(axis=(1, 2))
    h_prev = marginal_entropy(stats, prev)
    return np.maximum(h_joint - h_prev, 0.0)


@dataclass
class CodingPermutation:
    """Dexel coding order with its first-order conditional probability tables.

    first[v] is the probability of the first ordered dexel taking value v;
    cond[k-1, prev, cur] conditions position k on position k-1.
    """

    order: np.ndarray             # (P,) int64, permutation of [0, P)
    first: np.ndarray             # (2,) float64
    cond: np.ndarray              # (P-1, 2, 2) float64
    _cum: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        p = self.order.shape[0]
        if sorted(self.order.tolist()) != list(range(p)):
            raise ValueError("order is not a permutation")
        if np.any(self.first <= 0) or np.any(self.first >= 1) or abs(self.first.sum() - 1) > 1e-9:
            raise ValueError("first-position table is not a smoothed distribution")
        if self.cond.shape != (p - 1, 2, 2) and p > 1:
            raise ValueError("conditional table shape mismatch")
        if p > 1:
            if np.any(self.cond <= 0) or np.any(self.cond >= 1):
                raise ValueError("conditional probabilities must lie in (0, 1)")
            if np.max(np.abs(self.cond.sum(axis=2) - 1.0)) > 1e-9:
                raise ValueError("conditional rows must sum to 1")

    @property
    def P(self) -> int:
        return int(self.order.shape[0])

    def rate_bound(self) -> float:
        """First-order lower bound in bits/descriptor implied by the tables.

        Computed as H(first) plus the expected conditional entropy of each
        transition under the chain's own marginals.
        """
        h = entropy(float(self.first[0]), float(self.first[1]))
        pprev = self.first.copy()
        for k in range(1, self.P):
            t = self.cond[k - 1]
            h += float(-np.sum(pprev[:, None] * t * np.log2(t)))
            pprev = pprev @ t
        return h

    # Context layout used by the range coder.  Two identical rows for the
    # first position keep chain decoding uniform (ctx = base + prev bit).
    def freq_rows(self) -> list[np.ndarray]:
        f0 = rc.quantize_probs(self.first)
        rows = [f0, f0.copy()]
        for k in range(1, self.P):
            rows.append(rc.quantize_probs(self.cond[k - 1, 0]))
            rows.append(rc.quantize_probs(self.cond[k - 1, 1]))
        return rows

    def chain_base(self, count: int) -> np.ndarray:
        """Per-symbol context base for `count` concatenated descriptors."""
        pos = np.arange(self.P, dtype=np.int64)
        base = np.where(pos == 0, 0, 2 * pos)    # rows {0,1}, then {2k, 2k+1}
        return np.tile(base, count)

    def tables(self) -> tuple[np.ndarray, np.ndarray]:
        if self._cum is None:
            self._cum = rc.build_cumfreq(self.freq_rows())
        return self._cum

    def code_lengths(self) -> np.ndarray:
        """(2P, 2) matrix of -log2 quantized probabilities, context-row layout."""
        rows = np.stack(self.freq_rows()).astype(np.float64) / rc.TOTAL
        return -np.log2(rows)


def learn_permutation(stats: DexelStats) -> CodingPermutation:
    """Greedy coding order: start at the lowest-entropy dexel, then repeatedly
    append the unused dexel with the lowest conditional entropy given the
    last chosen one.  Ties go to the lowest dexel index."""
    p = stats.P
    marg = stats.marginal / max(stats.sample_count, 1)
    h_marg = _plogp(marg).sum(axis=1)
    order = np.empty(p, dtype=np.int64)
    used = np.zeros(p, dtype=bool)
    order[0] = int(np.argmin(h_marg))
    used[order[0]] = True
    for k in range(1, p):
        h = _entropies_given(stats, int(order[k - 1])).copy()
        h[used] = np.inf
        order[k] = int(np.argmin(h))
        used[order[k]] = True

    denom = stats.sample_count + 4.0
    first = (stats.marginal[order[0]] + 2.0) / denom
    cond = np.empty((max(p - 1, 0), 2, 2), dtype=np.float64)
    for k in range(1, p):
        cur, prev = int(order[k]), int(order[k - 1])
        joint = (stats.pairs[cur, prev] + 1.0) / denom     # [cur_bit, prev_bit]
        pprev = joint.sum(axis=0)
        cond[k - 1] = (joint / pprev[None, :]).T           # [prev_bit, cur_bit]
    return CodingPermutation(order=order, first=first, cond=cond)


def permutation_bound(stats: DexelStats, order) -> float:
    """Truncated chain bound: H(first) + sum of H(next | previous)."""
    order = np.asarray(order, dtype=np.int64)
    total = marginal_entropy(stats, int(order[0]))
    for k in range(1, order.shape[0]):
        total += conditional_entropy(stats, int(order[k]), int(order[k - 1]))
    return total


@dataclass
class SymbolTable:
    """Static probability table: 1-D memoryless or 2-D (context, symbol)."""

    probs: np.ndarray
    _cum: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim not in (1, 2):
            raise ValueError("probs must be 1-D or 2-D")
        rows = p if p.ndim == 2 else p[None, :]
        if np.any(rows <= 0):
            raise ValueError("probabilities must be positive after smoothing")
        if np.max(np.abs(rows.sum(axis=1) - 1.0)) > 1e-9:
            raise ValueError("each distribution must sum to 1 within 1e-9")
        object.__setattr__(self, "probs", p)

    @property
    def alphabet(self) -> int:
        return int(self.probs.shape[-1])

    @property
    def conditional(self) -> bool:
        return self.probs.ndim == 2

    @classmethod
    def from_counts(cls, counts: np.ndarray) -> "SymbolTable":
        c = np.asarray(counts, dtype=np.float64) + 1.0    # add-1 smoothing
        rows = c if c.ndim == 2 else c[None, :]
        rows = rows / rows.sum(axis=1, keepdims=True)
        return cls(rows if c.ndim == 2 else rows[0])

    def freq_rows(self) -> list[np.ndarray]:
        rows = self.probs if self.conditional else self.probs[None, :]
        return [rc.quantize_probs(r) for r in rows]

    def tables(self) -> tuple[np.ndarray, np.ndarray]:
        if self._cum is None:
            object.__setattr__(self, "_cum", rc.build_cumfreq(self.freq_rows()))
        return self._cum

    def code_lengths(self) -> np.ndarray:
        """-log2 of the quantized probabilities actually used by the coder."""
        rows = np.stack(self.freq_rows()).astype(np.float64) / rc.TOTAL
        lens = -np.log2(rows)
        return lens if self.conditional else lens[0]


def range_encode(symbols, table, context: str = "auto"):
    """Entropy-code a symbol sequence under a static model.

    With a memoryless SymbolTable every symbol uses the same distribution;
    with a conditional table, symbol i is coded in the context of symbol
    i-1 (context 0 for the first).  With a CodingPermutation the input is
    a concatenation of raw descriptors (length a multiple of P); each
    block is reordered and chain-coded.  Returns the payload bytes.
    """
    symbols = np.asarray(symbols, dtype=np.int64)
    if isinstance(table, CodingPermutation):
        if symbols.size % table.P:
            raise ValueError(f"sequence length {symbols.size} not a multiple of P {table.P}")
        count = symbols.size // table.P
        blocks = symbols.reshape(count, table.P)[:, table.order].ravel()
        base = table.chain_base(count)
        prev = np.concatenate([[0], blocks[:-1]]) if blocks.size else blocks
        cum, alens = table.tables()
        data, _, _ = rc.encode_symbols(blocks, base + prev, cum, alens)
        return data
    cum, alens = table.tables()
    if table.conditional and context != "memoryless":
        ctx = np.concatenate([[0], symbols[:-1]]) if symbols.size else symbols
    else:
        ctx = np.zeros(symbols.size, dtype=np.int64)
    data, _, _ = rc.encode_symbols(symbols, ctx, cum, alens)
    return data


def range_decode(data: bytes, count: int, table, context: str = "auto") -> np.ndarray:
    """Exact inverse of range_encode given the identical table and rule."""
    if isinstance(table, CodingPermutation):
        if count % table.P:
            raise ValueError(f"symbol count {count} not a multiple of P {table.P}")
        n = count // table.P
        cum, alens = table.tables()
        blocks = rc.decode_symbols_chain(data, count, table.chain_base(n), cum, alens)
        out = np.empty((n, table.P), dtype=np.int64)
        out[:, table.order] = blocks.reshape(n, table.P)
        return out.ravel()
    cum, alens = table.tables()
    if table.conditional and context != "memoryless":
        base = np.zeros(count, dtype=np.int64)
        return rc.decode_symbols_chain(data, count, base, cum, alens)
    return rc.decode_symbols(data, count, np.zeros(count, dtype=np.int64), cum, alens)
