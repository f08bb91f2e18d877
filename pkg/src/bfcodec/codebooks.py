"""Codebook sidecars shared by encoder and decoder ("BFCB" files).

Four kinds exist: intra-local and inter-local (dexel selection, coding
permutation with its conditional tables, and the keypoint side tables)
plus intra-bovw and inter-bovw (quantization-index tables).  Tables are
stored as the 16-bit fixed-point frequencies that drive the range coder,
so a reloaded codebook is bit-identical to the trained one.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .entropy import CodingPermutation, DexelStats, SymbolTable, learn_permutation
from .errors import ConfigError, FormatError, IoError
from .features import FeatureStream
from .rangecoder import TOTAL

MAGIC = b"BFCB"
VERSION = 1

KIND_INTRA_LOCAL = 1
KIND_INTER_LOCAL = 2
KIND_INTRA_BOVW = 3
KIND_INTER_BOVW = 4

_KIND_NAMES = {
    KIND_INTRA_LOCAL: "intra-local",
    KIND_INTER_LOCAL: "inter-local",
    KIND_INTRA_BOVW: "intra-bovw",
    KIND_INTER_BOVW: "inter-bovw",
}

DEFAULT_WINDOW = (64, 64, 4)
DEFAULT_SCALE_ALPHABET = 256
ORIENT_BINS = 32
BOVW_ALPHABET = 16


@dataclass
class LocalIntraCodebook:
    P: int
    K: int
    selection: np.ndarray          # (K,) dexel indices into [0, P)
    perm: CodingPermutation        # over the K selected dexels
    scale_table: SymbolTable
    theta_table: SymbolTable


@dataclass
class LocalInterCodebook:
    P: int
    K: int
    selection: np.ndarray
    perm: CodingPermutation        # over XOR residuals
    window: tuple[int, int, int]
    dx_table: SymbolTable          # alphabet 2*dx + 1, symbol = dx + window
    dy_table: SymbolTable
    ds_table: SymbolTable
    dtheta_table: SymbolTable      # alphabet 32, symbol = dtheta mod 32


@dataclass
class BovwIntraCodebook:
    V: int
    alphabet: int
    delta: float
    table: SymbolTable             # memoryless over quantization indices


@dataclass
class BovwInterCodebook:
    V: int
    alphabet: int
    delta: float
    table: SymbolTable             # conditional (prev index, cur index)


# --- serialization -------------------------------------------------------------

def _check_perm_selection(p, k, selection, perm):
    selection = np.asarray(selection, dtype=np.int64)
    if selection.shape[0] != k or np.any(selection < 0) or np.any(selection >= p):
        raise ConfigError(f"selection must hold {k} dexel indices below {p}")
    if len(np.unique(selection)) != k:
        raise ConfigError("selection indices must be distinct")
    if perm.P != k:
        raise ConfigError(f"permutation length {perm.P} != K {k}")
    return selection


def _freqs(table_or_perm) -> np.ndarray:
    rows = table_or_perm.freq_rows()
    return np.concatenate([np.asarray(r, dtype=np.uint32) for r in rows])


def _perm_blob(perm: CodingPermutation) -> bytes:
    out = bytearray()
    out += np.asarray(perm.order, dtype=np.uint16).tobytes()
    out += _freqs(perm).tobytes()
    return bytes(out)


def _read_perm(buf: memoryview, off: int, k: int) -> tuple[CodingPermutation, int]:
    order = np.frombuffer(buf, dtype="<u2", count=k, offset=off).astype(np.int64)
    off += 2 * k
    n_rows = 2 + 2 * (k - 1)
    f = np.frombuffer(buf, dtype="<u4", count=2 * n_rows, offset=off).astype(np.float64) / TOTAL
    off += 8 * n_rows
    first = f[:2]
    cond = f[4:].reshape(k - 1, 2, 2) if k > 1 else np.zeros((0, 2, 2))
    # rows 0 and 1 are the duplicated first-position table
    return CodingPermutation(order=order, first=first, cond=cond), off


def _table_blob(table: SymbolTable) -> bytes:
    return _freqs(table).tobytes()


def _read_table(buf: memoryview, off: int, shape) -> tuple[SymbolTable, int]:
    count = int(np.prod(shape))
    f = np.frombuffer(buf, dtype="<u4", count=count, offset=off).astype(np.float64) / TOTAL
    off += 4 * count
    return SymbolTable(f.reshape(shape) if len(shape) == 2 else f), off


def serialize_codebook(cb) -> bytes:
    out = bytearray()
    if isinstance(cb, LocalIntraCodebook):
        out += struct.pack("<4sHB", MAGIC, VERSION, KIND_INTRA_LOCAL)
        out += struct.pack("<HHH", cb.P, cb.K, cb.scale_table.alphabet)
        out += np.asarray(cb.selection, dtype=np.uint16).tobytes()
        out += _perm_blob(cb.perm)
        out += _table_blob(cb.scale_table)
        out += _table_blob(cb.theta_table)
    elif isinstance(cb, LocalInterCodebook):
        out += struct.pack("<4sHB", MAGIC, VERSION, KIND_INTER_LOCAL)
        out += struct.pack("<HHHHH", cb.P, cb.K, *cb.window)
        out += np.asarray(cb.selection, dtype=np.uint16).tobytes()
        out += _perm_blob(cb.perm)
        for t in (cb.dx_table, cb.dy_table, cb.ds_table, cb.dtheta_table):
            out += _table_blob(t)
    elif isinstance(cb, BovwIntraCodebook):
        out += struct.pack("<4sHB", MAGIC, VERSION, KIND_INTRA_BOVW)
        out += struct.pack("<IBd", cb.V, cb.alphabet, cb.delta)
        out += _table_blob(cb.table)
    elif isinstance(cb, BovwInterCodebook):
        out += struct.pack("<4sHB", MAGIC, VERSION, KIND_INTER_BOVW)
        out += struct.pack("<IBd", cb.V, cb.alphabet, cb.delta)
        out += _table_blob(cb.table)
    else:
        raise ConfigError(f"unknown codebook type {type(cb).__name__}")
    return bytes(out)


def deserialize_codebook(blob: bytes):
    if len(blob) < 7:
        raise FormatError("truncated codebook header", offset=len(blob))
    magic, version, kind = struct.unpack_from("<4sHB", blob, 0)
    if magic != MAGIC:
        raise FormatError(f"bad codebook magic {magic!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported codebook version {version}", offset=4)
    buf = memoryview(blob)
    off = 7
    try:
        if kind == KIND_INTRA_LOCAL:
            p, k, a_scale = struct.unpack_from("<HHH", blob, off)
            off += 6
            selection = np.frombuffer(buf, dtype="<u2", count=k, offset=off).astype(np.int64)
            off += 2 * k
            perm, off = _read_perm(buf, off, k)
            scale_t, off = _read_table(buf, off, (a_scale,))
            theta_t, off = _read_table(buf, off, (ORIENT_BINS,))
            return LocalIntraCodebook(p, k, selection, perm, scale_t, theta_t)
        if kind == KIND_INTER_LOCAL:
            p, k, wx, wy, ws = struct.unpack_from("<HHHHH", blob, off)
            off += 10
            selection = np.frombuffer(buf, dtype="<u2", count=k, offset=off).astype(np.int64)
            off += 2 * k
            perm, off = _read_perm(buf, off, k)
            dx_t, off = _read_table(buf, off, (2 * wx + 1,))
            dy_t, off = _read_table(buf, off, (2 * wy + 1,))
            ds_t, off = _read_table(buf, off, (2 * ws + 1,))
            dth_t, off = _read_table(buf, off, (ORIENT_BINS,))
            return LocalInterCodebook(p, k, selection, perm, (wx, wy, ws), dx_t, dy_t, ds_t, dth_t)
        if kind in (KIND_INTRA_BOVW, KIND_INTER_BOVW):
            v, a, delta = struct.unpack_from("<IBd", blob, off)
            off += 13
            shape = (a,) if kind == KIND_INTRA_BOVW else (a, a)
            table, off = _read_table(buf, off, shape)
            cls = BovwIntraCodebook if kind == KIND_INTRA_BOVW else BovwInterCodebook
            return cls(v, a, delta, table)
    except ValueError as exc:
        raise FormatError(f"truncated {_KIND_NAMES.get(kind, kind)} codebook: {exc}", offset=off) from exc
    raise FormatError(f"unknown codebook kind {kind}", offset=6)


def write_codebook(cb, path) -> int:
    blob = serialize_codebook(cb)
    try:
        with open(path, "wb") as fh:
            fh.write(blob)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return len(blob)


def read_codebook(path):
    with open(path, "rb") as fh:
        return deserialize_codebook(fh.read())


def codebook_digest(*parts) -> bytes:
    """16-byte digest tying a bitstream to its codebooks and parameters."""
    h = hashlib.sha256()
    for part in parts:
        if part is None:
            h.update(b"\0none\0")
        elif isinstance(part, bytes):
            h.update(part)
        else:
            h.update(serialize_codebook(part))
    return h.digest()[:16]


# --- training ------------------------------------------------------------------

def _empty_stats(k: int) -> DexelStats:
    # uniform pseudo-sample: stands in when a training stream yields no
    # matched residuals, keeping the greedy and the tables well-defined
    return DexelStats(
        P=k,
        sample_count=4,
        marginal=np.full((k, 2), 2, dtype=np.int64),
        pairs=np.full((k, k, 2, 2), 1, dtype=np.int64),
    )


def _hamming_window_matches(stream: FeatureStream, selection, window):
    """Yield (residual, dx, dy, ds, dtheta) for best in-window Hamming matches
    between each frame and its predecessor, in selected-dexel space."""
    wx, wy, ws = window
    prev_kp = prev_desc = None
    for fr in stream.frames:
        kp = fr.keypoint_array().astype(np.int64)
        desc = fr.descriptor_matrix()[:, selection] if len(fr) else np.zeros((0, len(selection)), np.uint8)
        if prev_kp is not None and len(kp) and len(prev_kp):
            dxm = kp[:, 0:1] - prev_kp[None, :, 0]
            dym = kp[:, 1:2] - prev_kp[None, :, 1]
            dsm = kp[:, 2:3] - prev_kp[None, :, 2]
            ok = (np.abs(dxm) <= wx) & (np.abs(dym) <= wy) & (np.abs(dsm) <= ws)
            cur = desc.astype(np.float64)
            ref = prev_desc.astype(np.float64)
            ham = cur @ (1.0 - ref.T) + (1.0 - cur) @ ref.T
            ham[~ok] = np.inf
            best = np.argmin(ham, axis=1)
            has = np.isfinite(ham[np.arange(len(kp)), best])
            for i in np.flatnonzero(has):
                l = best[i]
                yield (
                    desc[i] ^ prev_desc[l],
                    int(dxm[i, l]),
                    int(dym[i, l]),
                    int(dsm[i, l]),
                    int(kp[i, 3] - prev_kp[l, 3]) % ORIENT_BINS,
                )
        prev_kp, prev_desc = kp, desc


def train_local_codebooks(
    stream: FeatureStream,
    k: int | None = None,
    selection=None,
    window: tuple[int, int, int] = DEFAULT_WINDOW,
    scale_alphabet: int = DEFAULT_SCALE_ALPHABET,
) -> tuple[LocalIntraCodebook, LocalInterCodebook]:
    """Estimate intra and inter codebooks from a training stream.

    Residual statistics come from window-restricted pure-Hamming matching
    against the previous frame (no rate term: the tables it would need are
    the ones being trained).
    """
    p = stream.descriptor_length
    if selection is None:
        selection = np.arange(p, dtype=np.int64)
    selection = np.asarray(selection, dtype=np.int64)
    k = int(k) if k is not None else p
    if k > selection.shape[0]:
        raise ConfigError(f"K {k} exceeds selection length {selection.shape[0]}")
    selection = _check_perm_selection(p, k, selection[:k], _IdentityPerm(k))

    mats, scales, thetas = [], [], []
    for fr in stream.frames:
        if len(fr) == 0:
            continue
        kp = fr.keypoint_array()
        mats.append(fr.descriptor_matrix()[:, selection])
        scales.append(kp[:, 2])
        thetas.append(kp[:, 3])
    if not mats:
        raise ConfigError("training stream has no features")
    all_desc = np.concatenate(mats, axis=0)
    all_scales = np.concatenate(scales)
    all_thetas = np.concatenate(thetas)
    if int(all_scales.max()) >= scale_alphabet:
        raise ConfigError(
            f"scale {int(all_scales.max())} exceeds alphabet {scale_alphabet}; raise scale_alphabet"
        )

    intra_perm = learn_permutation(DexelStats.from_matrix(all_desc))
    scale_table = SymbolTable.from_counts(np.bincount(all_scales, minlength=scale_alphabet))
    theta_table = SymbolTable.from_counts(np.bincount(all_thetas, minlength=ORIENT_BINS))
    intra = LocalIntraCodebook(p, k, selection, intra_perm, scale_table, theta_table)

    wx, wy, ws = window
    residuals = []
    dx_c = np.zeros(2 * wx + 1, dtype=np.int64)
    dy_c = np.zeros(2 * wy + 1, dtype=np.int64)
    ds_c = np.zeros(2 * ws + 1, dtype=np.int64)
    dth_c = np.zeros(ORIENT_BINS, dtype=np.int64)
    for res, dx, dy, ds, dth in _hamming_window_matches(stream, selection, window):
        residuals.append(res)
        dx_c[dx + wx] += 1
        dy_c[dy + wy] += 1
        ds_c[ds + ws] += 1
        dth_c[dth] += 1
    res_stats = DexelStats.from_matrix(np.stack(residuals)) if residuals else _empty_stats(k)
    inter = LocalInterCodebook(
        p, k, selection,
        learn_permutation(res_stats),
        window,
        SymbolTable.from_counts(dx_c),
        SymbolTable.from_counts(dy_c),
        SymbolTable.from_counts(ds_c),
        SymbolTable.from_counts(dth_c),
    )
    return intra, inter


class _IdentityPerm:
    """Stand-in with just enough surface for the selection validity check."""

    def __init__(self, k):
        self.P = k


def train_bovw_codebooks(
    index_sequence: np.ndarray,
    delta: float,
    alphabet: int = BOVW_ALPHABET,
) -> tuple[BovwIntraCodebook, BovwInterCodebook]:
    """Estimate BoVW symbol tables from an (N, V) matrix of quantization indices."""
    q = np.asarray(index_sequence, dtype=np.int64)
    if q.ndim != 2 or q.shape[0] < 1:
        raise ConfigError("need at least one quantized global descriptor")
    q = np.minimum(q, alphabet - 1)
    v = q.shape[1]
    intra_counts = np.bincount(q.ravel(), minlength=alphabet)
    trans = np.zeros((alphabet, alphabet), dtype=np.int64)
    if q.shape[0] > 1:
        prev = q[:-1].ravel()
        cur = q[1:].ravel()
        np.add.at(trans, (prev, cur), 1)
    return (
        BovwIntraCodebook(v, alphabet, float(delta), SymbolTable.from_counts(intra_counts)),
        BovwInterCodebook(v, alphabet, float(delta), SymbolTable.from_counts(trans)),
    )
