"""Greedy asymmetric pairwise boosting over labeled descriptor pairs.

Each dexel acts as a weak classifier that predicts "matching" when the
bit agrees across a pair.  Rounds greedily pick the unused dexel with
the lowest weighted classification error (missed matches scaled by the
asymmetry factor), then reweight pairs AdaBoost-style.  The resulting
dexel order feeds the codec's descriptor-size selection.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateTrainingSet, FormatError, IoError

PAIR_MAGIC = b"BFP1"
PAIR_VERSION = 1

_EPS_FLOOR = 1e-10


@dataclass
class PairSet:
    """Labeled descriptor pairs; label True means the patches match."""

    a: np.ndarray                  # (N, P) uint8
    b: np.ndarray                  # (N, P) uint8
    labels: np.ndarray             # (N,) bool
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.uint8)
        self.b = np.asarray(self.b, dtype=np.uint8)
        self.labels = np.asarray(self.labels, dtype=bool)
        if self.a.shape != self.b.shape or self.a.ndim != 2:
            raise ConfigError("descriptor blocks must share an (N, P) shape")
        if self.labels.shape[0] != self.a.shape[0]:
            raise ConfigError("one label per pair required")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64)
            if w.shape[0] != self.a.shape[0] or np.any(w <= 0):
                raise ConfigError("weights must be positive, one per pair")
            self.weights = w / w.sum()

    @property
    def P(self) -> int:
        return int(self.a.shape[1])

    def __len__(self) -> int:
        return int(self.a.shape[0])


@dataclass
class DexelRanking:
    """Dexels ordered most discriminative first, with per-round error scores."""

    order: np.ndarray              # (rounds,) int64, no duplicates
    scores: np.ndarray             # (rounds,) float64 weighted errors

    def __post_init__(self):
        if len(np.unique(self.order)) != self.order.shape[0]:
            raise ValueError("ranking contains duplicate dexels")


def rank_dexels(
    pairs: PairSet,
    rounds: int | None = None,
    asymmetry: float = 2.0,
) -> DexelRanking:
    """Rank dexels by boosting over matching/non-matching pairs.

    Weighted error of dexel j: sum of pair weights where agreement
    misclassifies the pair, with false negatives (missed matches)
    multiplied by `asymmetry`.  Ties go to the lowest dexel index.
    """
    n, p = len(pairs), pairs.P
    if n == 0:
        raise DegenerateTrainingSet("no training pairs")
    match = pairs.labels
    if match.all() or not match.any():
        raise DegenerateTrainingSet("both matching and non-matching pairs are required")
    if rounds is None:
        rounds = p
    if not 1 <= rounds <= p:
        raise ConfigError(f"rounds {rounds} outside [1, {p}]")
    if asymmetry <= 0:
        raise ConfigError("asymmetry factor must be positive")

    eq = (pairs.a == pairs.b).astype(np.float64)          # h_j = 1 predicts "matching"
    w = pairs.weights.copy() if pairs.weights is not None else np.full(n, 1.0 / n)
    w = w / w.sum()

    order = np.empty(rounds, dtype=np.int64)
    scores = np.empty(rounds, dtype=np.float64)
    used = np.zeros(p, dtype=bool)
    for r in range(rounds):
        # false positives: agree on a non-matching pair; false negatives: disagree on a match
        eps = (w * ~match) @ eq + asymmetry * ((w * match) @ (1.0 - eq))
        eps[used] = np.inf
        j = int(np.argmin(eps))
        order[r] = j
        scores[r] = eps[j]
        used[j] = True
        e = min(max(float(eps[j]), _EPS_FLOOR), 1.0 - _EPS_FLOOR)
        alpha = 0.5 * np.log((1.0 - e) / e)
        wrong = eq[:, j].astype(bool) != match
        w = w * np.exp(np.where(wrong, alpha, -alpha))
        w = w / w.sum()
    return DexelRanking(order=order, scores=scores)


# --- synthetic pair generator ---------------------------------------------------

def gen_synthetic_pairs(
    p: int,
    n_pairs: int,
    planted: np.ndarray,
    agree_match: float = 0.95,
    agree_noise: float = 0.5,
    seed: int = 0,
) -> PairSet:
    """Pairs where the planted dexels agree across matches with high probability
    and every other dexel (and every dexel of non-matching pairs) is noise."""
    planted = np.asarray(planted, dtype=np.int64)
    rng = np.random.default_rng(seed)
    labels = np.zeros(n_pairs, dtype=bool)
    labels[: n_pairs // 2] = True
    rng.shuffle(labels)
    a = rng.integers(0, 2, (n_pairs, p)).astype(np.uint8)
    agree_prob = np.full((n_pairs, p), agree_noise)
    agree_prob[np.ix_(np.flatnonzero(labels), planted)] = agree_match
    agree = rng.random((n_pairs, p)) < agree_prob
    b = np.where(agree, a, 1 - a).astype(np.uint8)
    return PairSet(a=a, b=b, labels=labels)


# --- pair file formats -----------------------------------------------------------

def write_pairs(pairs: PairSet, path) -> int:
    """Binary pair file: header then per row packed A, packed B, label byte."""
    n, p = len(pairs), pairs.P
    nb = (p + 7) // 8
    out = bytearray(struct.pack("<4sHHI", PAIR_MAGIC, PAIR_VERSION, p, n))
    pa = np.packbits(pairs.a, axis=1, bitorder="little")
    pb = np.packbits(pairs.b, axis=1, bitorder="little")
    for i in range(n):
        out += pa[i, :nb].tobytes()
        out += pb[i, :nb].tobytes()
        out.append(1 if pairs.labels[i] else 0)
    try:
        with open(path, "wb") as fh:
            fh.write(out)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return len(out)


def read_pairs(path) -> PairSet:
    """Read the binary pair file or its CSV mirror (label,desc_a_hex,desc_b_hex)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != PAIR_MAGIC:
        return _read_pairs_csv(blob.decode())
    magic, version, p, n = struct.unpack_from("<4sHHI", blob, 0)
    if version != PAIR_VERSION:
        raise FormatError(f"unsupported pair file version {version}", offset=4)
    nb = (p + 7) // 8
    rec = 2 * nb + 1
    if len(blob) != 12 + n * rec:
        raise FormatError(f"expected {12 + n * rec} bytes, found {len(blob)}", offset=len(blob))
    a = np.empty((n, p), dtype=np.uint8)
    b = np.empty((n, p), dtype=np.uint8)
    labels = np.empty(n, dtype=bool)
    off = 12
    for i in range(n):
        a[i] = np.unpackbits(np.frombuffer(blob, np.uint8, nb, off), bitorder="little")[:p]
        b[i] = np.unpackbits(np.frombuffer(blob, np.uint8, nb, off + nb), bitorder="little")[:p]
        labels[i] = blob[off + 2 * nb] != 0
        off += rec
    return PairSet(a=a, b=b, labels=labels)


def _read_pairs_csv(text: str) -> PairSet:
    rows_a, rows_b, labels = [], [], []
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].lower().replace(" ", "") != "label,desc_a,desc_b":
        raise FormatError("pair CSV must start with header 'label,desc_a,desc_b'")
    p = None
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 3:
            raise FormatError(f"bad pair CSV row: {ln!r}")
        label, ha, hb = parts
        da = np.unpackbits(np.frombuffer(bytes.fromhex(ha), np.uint8), bitorder="little")
        db = np.unpackbits(np.frombuffer(bytes.fromhex(hb), np.uint8), bitorder="little")
        if p is None:
            p = da.shape[0]
        if da.shape[0] != p or db.shape[0] != p:
            raise FormatError("inconsistent descriptor lengths in pair CSV")
        rows_a.append(da)
        rows_b.append(db)
        labels.append(label.strip() in ("1", "true", "matching"))
    if not rows_a:
        raise FormatError("pair CSV holds no rows")
    return PairSet(a=np.stack(rows_a), b=np.stack(rows_b), labels=np.array(labels))


def write_pairs_csv(pairs: PairSet, path) -> int:
    lines = ["label,desc_a,desc_b"]
    pa = np.packbits(pairs.a, axis=1, bitorder="little")
    pb = np.packbits(pairs.b, axis=1, bitorder="little")
    for i in range(len(pairs)):
        lines.append(f"{int(pairs.labels[i])},{pa[i].tobytes().hex()},{pb[i].tobytes().hex()}")
    text = "\n".join(lines) + "\n"
    try:
        with open(path, "w") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return len(text)
