"""Bag-of-Visual-Words dictionaries and quantized global-descriptor coding.

A frame's local descriptors are hard-assigned to dictionary words; the
tf-idf weighted, L2-normalized histogram is the frame's global
descriptor.  Coding quantizes each component with a uniform step and
range-codes the indices, either memoryless (intra) or conditioned on
the previous frame's index at the same word (inter).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import rangecoder as rc
from .codebooks import BOVW_ALPHABET, BovwInterCodebook, BovwIntraCodebook, codebook_digest
from .errors import ConfigError, DimensionError, EmptyGop, FormatError, IoError, StreamError, SymbolError
from .features import FrameFeatures

METRIC_EUCLIDEAN = "euclidean"
METRIC_HAMMING = "hamming"

INDEX_CAP = BOVW_ALPHABET - 1      # quantization indices are clipped here before coding


@dataclass
class Dictionary:
    """Visual-word centroids with per-word idf weights."""

    centroids: np.ndarray          # (V, P); float64 for euclidean, uint8 bits for hamming
    idf: np.ndarray                # (V,) non-negative
    metric: str = METRIC_EUCLIDEAN

    def __post_init__(self):
        if self.metric not in (METRIC_EUCLIDEAN, METRIC_HAMMING):
            raise ConfigError(f"unknown metric {self.metric!r}")
        self.centroids = np.asarray(self.centroids)
        self.idf = np.asarray(self.idf, dtype=np.float64)
        if self.centroids.ndim != 2 or self.centroids.shape[0] < 1:
            raise ConfigError("centroids must be a non-empty (V, P) matrix")
        if self.idf.shape[0] != self.centroids.shape[0]:
            raise ConfigError("idf length must equal V")
        if not np.isfinite(self.idf).all():
            raise ConfigError("idf weights must be finite")

    @property
    def V(self) -> int:
        return int(self.centroids.shape[0])

    @property
    def P(self) -> int:
        return int(self.centroids.shape[1])

    def distinct(self) -> bool:
        return len(np.unique(self.centroids.round(12), axis=0)) == self.V


def _sq_dist(desc: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances (M, V); bits are treated as reals."""
    d = desc.astype(np.float64)
    c = centers.astype(np.float64)
    return np.maximum(
        (d * d).sum(1)[:, None] - 2.0 * d @ c.T + (c * c).sum(1)[None, :], 0.0
    )


def _hamming_dist(desc: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = desc.astype(np.float64)
    c = centers.astype(np.float64)
    return d @ (1.0 - c.T) + (1.0 - d) @ c.T


def assign_words(descriptors: np.ndarray, dictionary: Dictionary) -> np.ndarray:
    """Nearest-centroid word index per descriptor; ties go to the lowest word."""
    if descriptors.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    if descriptors.shape[1] != dictionary.P:
        raise DimensionError(
            f"descriptor length {descriptors.shape[1]} != dictionary P {dictionary.P}"
        )
    dist = (
        _sq_dist(descriptors, dictionary.centroids)
        if dictionary.metric == METRIC_EUCLIDEAN
        else _hamming_dist(descriptors, dictionary.centroids)
    )
    return np.argmin(dist, axis=1).astype(np.int64)


# --- dictionary learning ----------------------------------------------------------

def _kmeanspp_seed(data: np.ndarray, v: int, rng, dist_fn) -> np.ndarray:
    n = data.shape[0]
    centers = np.empty(v, dtype=np.int64)
    centers[0] = rng.integers(0, n)
    d2 = dist_fn(data, data[centers[0]][None, :])[:, 0]
    if dist_fn is _hamming_dist:
        d2 = d2 * d2
    for i in range(1, v):
        total = d2.sum()
        if total <= 0:
            centers[i] = rng.integers(0, n)      # all mass on existing centers
        else:
            centers[i] = rng.choice(n, p=d2 / total)
        nd = dist_fn(data, data[centers[i]][None, :])[:, 0]
        if dist_fn is _hamming_dist:
            nd = nd * nd
        d2 = np.minimum(d2, nd)
    return centers


def _repair_empty(centers, data, labels, counts, dist_fn):
    """Give each empty cluster the farthest member of the largest one."""
    for c in np.flatnonzero(counts == 0):
        big = int(np.argmax(counts))
        members = np.flatnonzero(labels == big)
        far = members[int(np.argmax(dist_fn(data[members], centers[big][None, :])[:, 0]))]
        centers[c] = data[far]
        labels[far] = c
        counts[big] -= 1
        counts[c] += 1
    return centers, labels, counts


def learn_dictionary(
    descriptors: np.ndarray,
    v: int,
    method: str = "kmeans",
    seed: int = 0,
    documents: list[np.ndarray] | None = None,
    max_iter: int = 100,
) -> Dictionary:
    """Cluster a descriptor sample into V visual words.

    kmeans runs Lloyd iterations on bits-as-reals with k-means++ seeding;
    kmedians/kmedoids use the Hamming metric with majority-bit or medoid
    updates.  `documents` (descriptor matrices, one per image) feed the
    idf weights; without them idf is all-ones.
    """
    data = np.asarray(descriptors, dtype=np.uint8)
    if data.ndim != 2 or data.shape[0] < v:
        raise ConfigError(f"need at least V={v} descriptors, got {data.shape}")
    if method not in ("kmeans", "kmedians", "kmedoids"):
        raise ConfigError(f"unknown method {method!r}")
    rng = np.random.default_rng(seed)
    hamming = method != "kmeans"
    dist_fn = _hamming_dist if hamming else _sq_dist

    if hamming and len(np.unique(data, axis=0)) < v:
        raise ConfigError(f"fewer than V={v} distinct descriptors for a Hamming dictionary")

    seed_idx = _kmeanspp_seed(data, v, rng, dist_fn)
    centers = data[seed_idx].astype(np.float64 if not hamming else np.uint8).copy()
    labels = np.full(data.shape[0], -1, dtype=np.int64)
    objective = []
    for _ in range(max_iter):
        dist = dist_fn(data, centers)
        new_labels = np.argmin(dist, axis=1)
        counts = np.bincount(new_labels, minlength=v)
        if np.any(counts == 0):
            centers, new_labels, counts = _repair_empty(
                centers.copy(), data, new_labels, counts, dist_fn
            )
        objective.append(float(dist[np.arange(data.shape[0]), new_labels].sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(v):
            members = data[labels == c]
            if members.shape[0] == 0:
                continue
            if method == "kmeans":
                centers[c] = members.mean(axis=0)
            elif method == "kmedians":
                # majority bit per dexel; exact halves resolve to 1
                centers[c] = (2 * members.sum(axis=0) >= members.shape[0]).astype(np.uint8)
            else:
                d = _hamming_dist(members, members)
                centers[c] = members[int(np.argmin(d.sum(axis=1)))]

    if len(np.unique(centers.round(12), axis=0)) != v:
        raise ConfigError("clustering collapsed to duplicate centroids; lower V or change seed")
    dictionary = Dictionary(
        centroids=centers,
        idf=np.ones(v, dtype=np.float64),
        metric=METRIC_HAMMING if hamming else METRIC_EUCLIDEAN,
    )
    dictionary.objective_history = objective
    if documents is not None:
        dictionary = compute_idf(dictionary, documents)
    return dictionary


def compute_idf(dictionary: Dictionary, documents: list[np.ndarray]) -> Dictionary:
    """idf[j] = ln(D / (1 + number of documents containing word j))."""
    n_docs = len(documents)
    if n_docs == 0:
        raise ConfigError("idf needs at least one document")
    df = np.zeros(dictionary.V, dtype=np.int64)
    for doc in documents:
        doc = np.asarray(doc, dtype=np.uint8)
        if doc.shape[0] == 0:
            continue
        df[np.unique(assign_words(doc, dictionary))] += 1
    idf = np.log(n_docs / (1.0 + df))
    out = Dictionary(dictionary.centroids, np.maximum(idf, 0.0), dictionary.metric)
    if hasattr(dictionary, "objective_history"):
        out.objective_history = dictionary.objective_history
    return out


# --- global descriptors -----------------------------------------------------------

def build_global(features, dictionary: Dictionary) -> np.ndarray:
    """tf-idf weighted, L2-normalized word histogram of a frame's features.

    Accepts a FrameFeatures or a raw (M, P) bit matrix; an empty input
    yields the all-zeros vector.
    """
    desc = features.descriptor_matrix() if isinstance(features, FrameFeatures) else np.asarray(features)
    hist = np.zeros(dictionary.V, dtype=np.float64)
    if desc.shape[0] == 0:
        return hist
    words = assign_words(desc, dictionary)
    np.add.at(hist, words, 1.0)
    hist *= dictionary.idf
    norm = np.linalg.norm(hist)
    return hist / norm if norm > 0 else hist


@dataclass
class QuantizedGlobal:
    """Uniform-quantization indices of a global descriptor."""

    indices: np.ndarray            # (V,) int64, floor(value / delta)
    delta: float

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.delta <= 0:
            raise ConfigError("quantization step must be positive")


def quantize_global(g: np.ndarray, delta: float) -> QuantizedGlobal:
    """Uniform scalar quantization with one step size for every word."""
    if delta <= 0:
        raise ConfigError("quantization step must be positive")
    g = np.asarray(g, dtype=np.float64)
    idx = np.floor(g / delta)
    # settle float division against the exact floor definition
    idx = np.where(idx * delta > g, idx - 1.0, idx)
    idx = np.where((idx + 1.0) * delta <= g, idx + 1.0, idx)
    return QuantizedGlobal(indices=idx.astype(np.int64), delta=float(delta))


def dequantize_global(q: QuantizedGlobal) -> np.ndarray:
    """Left-edge reconstruction: value = index * delta."""
    return q.indices.astype(np.float64) * q.delta


def aggregate_gop(globals_list, strategy: str = "skip") -> np.ndarray:
    """Summarize one GOP's global descriptors.

    "skip" keeps the first frame; "gop_median" takes the element-wise
    lower median and re-normalizes.
    """
    if len(globals_list) == 0:
        raise EmptyGop("no descriptors in GOP")
    if strategy == "skip":
        return np.asarray(globals_list[0], dtype=np.float64)
    if strategy != "gop_median":
        raise ConfigError(f"unknown GOP strategy {strategy!r}")
    stack = np.stack([np.asarray(g, dtype=np.float64) for g in globals_list])
    med = np.sort(stack, axis=0)[(stack.shape[0] - 1) // 2]
    norm = np.linalg.norm(med)
    return med / norm if norm > 0 else med


# --- coding -----------------------------------------------------------------------

def _check_indices(q: QuantizedGlobal, alphabet: int) -> np.ndarray:
    idx = np.minimum(q.indices, INDEX_CAP)
    if np.any(idx < 0):
        raise SymbolError("negative quantization index")
    if np.any(idx >= alphabet):
        raise SymbolError(
            f"quantization index {int(idx.max())} outside trained alphabet {alphabet}"
        )
    return idx


def encode_global_intra(q: QuantizedGlobal, codebook: BovwIntraCodebook) -> bytes:
    """Memoryless coding of the clipped quantization indices."""
    idx = _check_indices(q, codebook.alphabet)
    cum, alens = codebook.table.tables()
    data, _, _ = rc.encode_symbols(idx, np.zeros(idx.shape[0], dtype=np.int64), cum, alens)
    return data


def decode_global_intra(data: bytes, v: int, codebook: BovwIntraCodebook) -> np.ndarray:
    cum, alens = codebook.table.tables()
    return rc.decode_symbols(data, v, np.zeros(v, dtype=np.int64), cum, alens)


def encode_global_inter(
    q: QuantizedGlobal, q_prev: QuantizedGlobal, codebook: BovwInterCodebook
) -> bytes:
    """Code index j in the context of the previous frame's index at word j."""
    if q.indices.shape != q_prev.indices.shape or q.delta != q_prev.delta:
        raise StreamError("inter coding needs matching V and delta")
    idx = _check_indices(q, codebook.alphabet)
    ctx = _check_indices(q_prev, codebook.alphabet)
    cum, alens = codebook.table.tables()
    data, _, _ = rc.encode_symbols(idx, ctx, cum, alens)
    return data


def decode_global_inter(
    data: bytes, prev_indices: np.ndarray, codebook: BovwInterCodebook
) -> np.ndarray:
    ctx = np.minimum(np.asarray(prev_indices, dtype=np.int64), codebook.alphabet - 1)
    cum, alens = codebook.table.tables()
    return rc.decode_symbols(data, ctx.shape[0], ctx, cum, alens)


# --- global-descriptor bitstream ("BGE1") -------------------------------------------

GLOBAL_MAGIC = b"BGE1"
GLOBAL_VERSION = 1
GMODE_INTRA, GMODE_INTER = 0, 1

_BGE_HEADER = struct.Struct("<4sHIdBI16s")


@dataclass
class EncodedGlobalStream:
    config_digest: bytes
    V: int
    delta: float
    mode: int
    payloads: list[bytes]

    def payload_bytes(self) -> int:
        return sum(len(p) for p in self.payloads)


def _bovw_digest(mode: int, intra_cb, inter_cb, v: int, delta: float) -> bytes:
    params = struct.pack("<BId", mode, v, delta)
    if mode == GMODE_INTRA:
        return codebook_digest(intra_cb, params)
    return codebook_digest(intra_cb, inter_cb, params)


def encode_global_stream(
    globals_seq,
    delta: float,
    intra_cb: BovwIntraCodebook,
    inter_cb: BovwInterCodebook | None = None,
    mode: str = "intra",
) -> EncodedGlobalStream:
    """Quantize and code a sequence of global descriptors.

    Inter mode codes frame 0 with the intra table and every later frame
    against its predecessor's decoded indices.
    """
    seq = [np.asarray(g, dtype=np.float64) for g in globals_seq]
    if not seq:
        raise StreamError("empty global-descriptor sequence")
    v = seq[0].shape[0]
    mode_id = {"intra": GMODE_INTRA, "inter": GMODE_INTER}[mode]
    if mode_id == GMODE_INTER and inter_cb is None:
        raise ConfigError("inter mode requires an inter codebook")
    payloads = []
    prev = None
    for g in seq:
        if g.shape[0] != v:
            raise StreamError("global descriptors must share V")
        q = quantize_global(g, delta)
        if mode_id == GMODE_INTRA or prev is None:
            payloads.append(encode_global_intra(q, intra_cb))
        else:
            payloads.append(encode_global_inter(q, prev, inter_cb))
        prev = QuantizedGlobal(np.minimum(q.indices, INDEX_CAP), delta)
    return EncodedGlobalStream(
        config_digest=_bovw_digest(mode_id, intra_cb, inter_cb, v, delta),
        V=v, delta=float(delta), mode=mode_id, payloads=payloads,
    )


def decode_global_stream(
    encoded: EncodedGlobalStream,
    intra_cb: BovwIntraCodebook,
    inter_cb: BovwInterCodebook | None = None,
) -> np.ndarray:
    """Decode to the (N, V) matrix of quantization indices."""
    if encoded.config_digest != _bovw_digest(
        encoded.mode, intra_cb, inter_cb, encoded.V, encoded.delta
    ):
        raise StreamError("codebook/config digest mismatch for global stream")
    out = np.zeros((len(encoded.payloads), encoded.V), dtype=np.int64)
    prev = None
    for i, data in enumerate(encoded.payloads):
        if encoded.mode == GMODE_INTRA or prev is None:
            out[i] = decode_global_intra(data, encoded.V, intra_cb)
        else:
            out[i] = decode_global_inter(data, prev, inter_cb)
        prev = out[i]
    return out


def serialize_global_stream(es: EncodedGlobalStream) -> bytes:
    out = bytearray()
    out += _BGE_HEADER.pack(
        GLOBAL_MAGIC, GLOBAL_VERSION, es.V, es.delta, es.mode, len(es.payloads), es.config_digest
    )
    for p in es.payloads:
        out += struct.pack("<I", len(p))
        out += p
    return bytes(out)


def deserialize_global_stream(blob: bytes) -> EncodedGlobalStream:
    if len(blob) < _BGE_HEADER.size:
        raise FormatError("truncated global bitstream header", offset=len(blob))
    magic, version, v, delta, mode, n, digest = _BGE_HEADER.unpack_from(blob, 0)
    if magic != GLOBAL_MAGIC:
        raise FormatError(f"bad global bitstream magic {magic!r}", offset=0)
    if version != GLOBAL_VERSION:
        raise FormatError(f"unsupported global bitstream version {version}", offset=4)
    payloads = []
    off = _BGE_HEADER.size
    for _ in range(n):
        if len(blob) < off + 4:
            raise FormatError("truncated global frame chunk", offset=off)
        (plen,) = struct.unpack_from("<I", blob, off)
        off += 4
        if len(blob) < off + plen:
            raise FormatError("truncated global frame payload", offset=off)
        payloads.append(blob[off:off + plen])
        off += plen
    if off != len(blob):
        raise FormatError(f"{len(blob) - off} trailing bytes", offset=off)
    return EncodedGlobalStream(digest, v, delta, mode, payloads)


def write_global_stream(es: EncodedGlobalStream, path) -> int:
    blob = serialize_global_stream(es)
    try:
        with open(path, "wb") as fh:
            fh.write(blob)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return len(blob)


def read_global_stream(path) -> EncodedGlobalStream:
    with open(path, "rb") as fh:
        return deserialize_global_stream(fh.read())


# --- dictionary file ("BFDC") ---------------------------------------------------------

DICT_MAGIC = b"BFDC"
DICT_VERSION = 1

_DICT_HEADER = struct.Struct("<4sHIHB")


def serialize_dictionary(d: Dictionary) -> bytes:
    out = bytearray()
    metric_id = 0 if d.metric == METRIC_EUCLIDEAN else 1
    out += _DICT_HEADER.pack(DICT_MAGIC, DICT_VERSION, d.V, d.P, metric_id)
    if d.metric == METRIC_EUCLIDEAN:
        out += np.ascontiguousarray(d.centroids, dtype="<f8").tobytes()
    else:
        out += np.packbits(d.centroids.astype(np.uint8), axis=1, bitorder="little").tobytes()
    out += np.ascontiguousarray(d.idf, dtype="<f8").tobytes()
    return bytes(out)


def deserialize_dictionary(blob: bytes) -> Dictionary:
    if len(blob) < _DICT_HEADER.size:
        raise FormatError("truncated dictionary header", offset=len(blob))
    magic, version, v, p, metric_id = _DICT_HEADER.unpack_from(blob, 0)
    if magic != DICT_MAGIC:
        raise FormatError(f"bad dictionary magic {magic!r}", offset=0)
    if version != DICT_VERSION:
        raise FormatError(f"unsupported dictionary version {version}", offset=4)
    off = _DICT_HEADER.size
    try:
        if metric_id == 0:
            centroids = np.frombuffer(blob, "<f8", v * p, off).reshape(v, p).copy()
            off += 8 * v * p
            metric = METRIC_EUCLIDEAN
        else:
            nb = (p + 7) // 8
            rows = np.frombuffer(blob, np.uint8, v * nb, off).reshape(v, nb)
            centroids = np.unpackbits(rows, axis=1, bitorder="little")[:, :p].copy()
            off += v * nb
            metric = METRIC_HAMMING
        idf = np.frombuffer(blob, "<f8", v, off).copy()
        off += 8 * v
    except ValueError as exc:
        raise FormatError(f"truncated dictionary payload: {exc}", offset=off) from exc
    if off != len(blob):
        raise FormatError(f"{len(blob) - off} trailing bytes", offset=off)
    return Dictionary(centroids=centroids, idf=idf, metric=metric)


def write_dictionary(d: Dictionary, path) -> int:
    blob = serialize_dictionary(d)
    try:
        with open(path, "wb") as fh:
            fh.write(blob)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return len(blob)


def read_dictionary(path) -> Dictionary:
    with open(path, "rb") as fh:
        return deserialize_dictionary(fh.read())
