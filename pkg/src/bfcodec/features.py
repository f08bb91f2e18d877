"""Domain types for binary local features and the stream container format.

A feature stream is an ordered list of frames, each holding quantized
keypoints paired with fixed-length binary descriptors.  Streams are
serialized to the "BFS1" binary container (little-endian, fixed-width
records) or to an equivalent JSON document; both are documented in
docs/formats.md.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FormatError, InvalidKeypoint, IoError

MAGIC = b"BFS1"
VERSION = 1

COORD_STEP = 0.25
ORIENT_STEP = math.pi / 16.0
ORIENT_BINS = 32


def _round_half_away(v: float) -> int:
    # round() would go to even; coding needs a platform-independent tie rule
    return int(math.floor(abs(v) + 0.5)) * (1 if v >= 0 else -1)


@dataclass(frozen=True)
class QuantizedKeypoint:
    """Keypoint in quarter-pixel / quarter-scale units, orientation in pi/16 steps."""

    x: int
    y: int
    scale: int
    orientation: int

    def __post_init__(self):
        if self.x < 0 or self.y < 0 or self.scale < 0:
            raise InvalidKeypoint(f"negative quantized coordinates: {self}")
        if not 0 <= self.orientation < ORIENT_BINS:
            raise InvalidKeypoint(f"orientation index out of [0, {ORIENT_BINS}): {self}")

    def dequantize(self) -> tuple[float, float, float, float]:
        return (
            self.x * COORD_STEP,
            self.y * COORD_STEP,
            self.scale * COORD_STEP,
            self.orientation * ORIENT_STEP,
        )


def quantize_keypoint(x: float, y: float, scale: float, orientation: float) -> QuantizedKeypoint:
    """Quantize a detector keypoint: 1/4-unit steps for x, y, scale; pi/16 for orientation.

    Ties round half away from zero.  Orientation is reduced modulo 2*pi
    before rounding, so index 32 wraps to 0.
    """
    vals = (x, y, scale, orientation)
    if not all(math.isfinite(v) for v in vals):
        raise InvalidKeypoint(f"non-finite keypoint input {vals}")
    if scale <= 0:
        raise InvalidKeypoint(f"non-positive scale {scale}")
    theta = math.fmod(orientation, 2.0 * math.pi)
    if theta < 0:
        theta += 2.0 * math.pi
    return QuantizedKeypoint(
        x=_round_half_away(x / COORD_STEP),
        y=_round_half_away(y / COORD_STEP),
        scale=_round_half_away(scale / COORD_STEP),
        orientation=_round_half_away(theta / ORIENT_STEP) % ORIENT_BINS,
    )


@dataclass(frozen=True, eq=False)
class BinaryDescriptor:
    """Fixed-length bit vector; `bits` holds one uint8 (0/1) per dexel."""

    bits: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.bits, dtype=np.uint8) & 1)
        arr.setflags(write=False)
        object.__setattr__(self, "bits", arr)

    def __len__(self) -> int:
        return int(self.bits.shape[0])

    def __eq__(self, other) -> bool:
        return isinstance(other, BinaryDescriptor) and np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash(self.bits.tobytes())

    def packed(self) -> bytes:
        """Pack to bytes: bit j of the descriptor is bit (j mod 8) of byte j // 8."""
        return np.packbits(self.bits, bitorder="little").tobytes()

    @classmethod
    def from_packed(cls, data: bytes, length: int) -> "BinaryDescriptor":
        bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
        return cls(bits[:length])


@dataclass(frozen=True, eq=False)
class LocalFeature:
    keypoint: QuantizedKeypoint
    descriptor: BinaryDescriptor

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, LocalFeature)
            and self.keypoint == other.keypoint
            and self.descriptor == other.descriptor
        )


@dataclass
class FrameFeatures:
    """Ordered feature set extracted from one frame."""

    frame_index: int
    features: list[LocalFeature] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.features)

    def keypoint_array(self) -> np.ndarray:
        """(M, 4) int32 array of (x, y, scale, orientation)."""
        if not self.features:
            return np.zeros((0, 4), dtype=np.int32)
        return np.array(
            [(f.keypoint.x, f.keypoint.y, f.keypoint.scale, f.keypoint.orientation) for f in self.features],
            dtype=np.int32,
        )

    def descriptor_matrix(self) -> np.ndarray:
        """(M, P) uint8 matrix of descriptor bits."""
        if not self.features:
            return np.zeros((0, 0), dtype=np.uint8)
        return np.stack([f.descriptor.bits for f in self.features]).astype(np.uint8)

    @classmethod
    def from_arrays(cls, frame_index: int, keypoints: np.ndarray, descriptors: np.ndarray) -> "FrameFeatures":
        feats = [
            LocalFeature(
                QuantizedKeypoint(int(k[0]), int(k[1]), int(k[2]), int(k[3])),
                BinaryDescriptor(d),
            )
            for k, d in zip(keypoints, descriptors)
        ]
        return cls(frame_index=frame_index, features=feats)


@dataclass
class FeatureStream:
    """Sequence of per-frame feature sets sharing one descriptor length."""

    descriptor_length: int
    frames: list[FrameFeatures] = field(default_factory=list)
    metadata: dict[str, str] = field(default_factory=dict)

    def validate(self):
        last = -1
        for fr in self.frames:
            if fr.frame_index <= last:
                raise FormatError(f"frame_index {fr.frame_index} not strictly increasing")
            last = fr.frame_index
            for f in fr.features:
                if len(f.descriptor) != self.descriptor_length:
                    raise FormatError(
                        f"descriptor length {len(f.descriptor)} != stream P {self.descriptor_length}"
                    )

    def total_features(self) -> int:
        return sum(len(fr) for fr in self.frames)

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureStream):
            return NotImplemented
        if self.descriptor_length != other.descriptor_length or self.metadata != other.metadata:
            return False
        if len(self.frames) != len(other.frames):
            return False
        for a, b in zip(self.frames, other.frames):
            if a.frame_index != b.frame_index or len(a) != len(b):
                return False
            if a.features != b.features:
                return False
        return True


# --- BFS1 binary container ---------------------------------------------------

_HEADER = struct.Struct("<4sHHII")           # magic, version, P, N, meta_len
_FRAME_HEADER = struct.Struct("<II")         # frame_index, M
_KEYPOINT = struct.Struct("<iiiB")           # x, y, scale, orientation


def write_stream(stream: FeatureStream, path) -> int:
    """Serialize to the BFS1 container.  Returns the byte count written."""
    blob = serialize_stream(stream)
    try:
        with open(path, "wb") as fh:
            fh.write(blob)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return len(blob)


def serialize_stream(stream: FeatureStream) -> bytes:
    stream.validate()
    meta = json.dumps(stream.metadata, sort_keys=True, separators=(",", ":")).encode()
    out = bytearray()
    out += _HEADER.pack(MAGIC, VERSION, stream.descriptor_length, len(stream.frames), len(meta))
    out += meta
    nbytes = (stream.descriptor_length + 7) // 8
    for fr in stream.frames:
        out += _FRAME_HEADER.pack(fr.frame_index, len(fr))
        for f in fr.features:
            kp = f.keypoint
            out += _KEYPOINT.pack(kp.x, kp.y, kp.scale, kp.orientation)
            packed = f.descriptor.packed()
            out += packed.ljust(nbytes, b"\0")
    return bytes(out)


def read_stream(path) -> FeatureStream:
    """Parse a BFS1 container or its JSON mirror (dispatch on leading bytes)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:1] in (b"{", b" ", b"\n"):
        return stream_from_json(blob.decode())
    return deserialize_stream(blob)


def deserialize_stream(blob: bytes) -> FeatureStream:
    if len(blob) < _HEADER.size:
        raise FormatError("truncated header", offset=len(blob))
    magic, version, p, n_frames, meta_len = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    off = _HEADER.size
    if len(blob) < off + meta_len:
        raise FormatError("truncated metadata", offset=len(blob))
    try:
        metadata = json.loads(blob[off:off + meta_len].decode()) if meta_len else {}
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"bad metadata block: {exc}", offset=off) from exc
    off += meta_len
    nbytes = (p + 7) // 8
    frames = []
    last_index = -1
    for _ in range(n_frames):
        if len(blob) < off + _FRAME_HEADER.size:
            raise FormatError("truncated frame header", offset=off)
        frame_index, m = _FRAME_HEADER.unpack_from(blob, off)
        off += _FRAME_HEADER.size
        if frame_index <= last_index:
            raise FormatError(f"frame_index {frame_index} not increasing", offset=off)
        last_index = frame_index
        rec = _KEYPOINT.size + nbytes
        if len(blob) < off + m * rec:
            raise FormatError("truncated feature records", offset=off)
        feats = []
        for _ in range(m):
            x, y, s, o = _KEYPOINT.unpack_from(blob, off)
            off += _KEYPOINT.size
            if x < 0 or y < 0 or s < 0 or o >= ORIENT_BINS:
                raise FormatError(f"invalid keypoint record ({x},{y},{s},{o})", offset=off)
            desc = BinaryDescriptor.from_packed(blob[off:off + nbytes], p)
            off += nbytes
            feats.append(LocalFeature(QuantizedKeypoint(x, y, s, o), desc))
        frames.append(FrameFeatures(frame_index=frame_index, features=feats))
    if off != len(blob):
        raise FormatError(f"{len(blob) - off} trailing bytes", offset=off)
    return FeatureStream(descriptor_length=p, frames=frames, metadata=metadata)


# --- JSON mirror --------------------------------------------------------------

def stream_to_json(stream: FeatureStream) -> str:
    stream.validate()
    doc = {
        "format": "bfs-json",
        "version": VERSION,
        "descriptor_length": stream.descriptor_length,
        "metadata": stream.metadata,
        "frames": [
            {
                "frame_index": fr.frame_index,
                "features": [
                    {
                        "x": f.keypoint.x,
                        "y": f.keypoint.y,
                        "scale": f.keypoint.scale,
                        "orientation": f.keypoint.orientation,
                        "descriptor": f.descriptor.packed().hex(),
                    }
                    for f in fr.features
                ],
            }
            for fr in stream.frames
        ],
    }
    return json.dumps(doc, indent=1)


def stream_from_json(text: str) -> FeatureStream:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"bad JSON stream: {exc}") from exc
    if doc.get("format") != "bfs-json":
        raise FormatError("missing bfs-json format tag")
    if doc.get("version") != VERSION:
        raise FormatError(f"unsupported version {doc.get('version')}")
    p = int(doc["descriptor_length"])
    frames = []
    for fr in doc["frames"]:
        feats = []
        for f in fr["features"]:
            desc = BinaryDescriptor.from_packed(bytes.fromhex(f["descriptor"]), p)
            feats.append(
                LocalFeature(
                    QuantizedKeypoint(int(f["x"]), int(f["y"]), int(f["scale"]), int(f["orientation"])),
                    desc,
                )
            )
        frames.append(FrameFeatures(frame_index=int(fr["frame_index"]), features=feats))
    stream = FeatureStream(descriptor_length=p, frames=frames, metadata=dict(doc.get("metadata", {})))
    stream.validate()
    return stream


def write_stream_json(stream: FeatureStream, path) -> int:
    text = stream_to_json(stream)
    try:
        with open(path, "w") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return len(text)


# --- Synthetic stream generator ----------------------------------------------

@dataclass
class SynthConfig:
    """Generator parameters for reproducible synthetic feature streams.

    Descriptors follow a first-order Markov chain along the dexel index
    with transition matrix `transition[prev_bit][next_bit]`.  A fraction
    `duplication_prob` of each frame's features are copies of the previous
    frame's features with per-dexel flips (`flip_prob`) and integer
    keypoint drift (uniform in [-drift, drift] quantized units).
    """

    descriptor_length: int = 512
    frames: int = 30
    features_per_frame: int = 50
    width: int = 640
    height: int = 480
    transition: tuple[tuple[float, float], tuple[float, float]] = ((0.5, 0.5), (0.5, 0.5))
    duplication_prob: float = 0.0
    flip_prob: float = 0.0
    drift: int = 0
    scale_range: tuple[int, int] = (4, 64)
    seed: int = 0

    def validate(self):
        for p in (self.duplication_prob, self.flip_prob):
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"probability {p} outside [0, 1]")
        for row in self.transition:
            if abs(row[0] + row[1] - 1.0) > 1e-9 or min(row) < 0.0:
                raise ConfigError(f"transition row {row} is not a distribution")
        if self.descriptor_length <= 0 or self.frames < 0 or self.features_per_frame < 0:
            raise ConfigError("sizes must be non-negative (P positive)")
        if self.drift < 0:
            raise ConfigError("drift must be non-negative")
        if self.scale_range[0] < 0 or self.scale_range[1] < self.scale_range[0]:
            raise ConfigError(f"bad scale range {self.scale_range}")


def _markov_descriptors(rng, m: int, p: int, transition) -> np.ndarray:
    t = np.asarray(transition, dtype=np.float64)
    # stationary probability of a 1 for the chain's first dexel
    denom = t[0, 1] + t[1, 0]
    p1 = 0.5 if denom == 0 else t[0, 1] / denom
    d = np.empty((m, p), dtype=np.uint8)
    d[:, 0] = rng.random(m) < p1
    u = rng.random((m, p))
    for j in range(1, p):
        prev = d[:, j - 1]
        d[:, j] = u[:, j] < t[prev, 1]
    return d


def synth_stream(config: SynthConfig) -> FeatureStream:
    """Generate a reproducible stream with controlled temporal redundancy."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    p = config.descriptor_length
    m = config.features_per_frame
    xmax, ymax = 4 * config.width, 4 * config.height
    smin, smax = config.scale_range

    def fresh(count):
        kps = np.empty((count, 4), dtype=np.int64)
        kps[:, 0] = rng.integers(0, xmax, count)
        kps[:, 1] = rng.integers(0, ymax, count)
        kps[:, 2] = rng.integers(smin, smax + 1, count)
        kps[:, 3] = rng.integers(0, ORIENT_BINS, count)
        return kps, _markov_descriptors(rng, count, p, config.transition)

    frames = []
    prev_kps = prev_desc = None
    for n in range(config.frames):
        if n == 0 or prev_kps is None or prev_kps.shape[0] == 0:
            kps, desc = fresh(m)
        else:
            dup = rng.random(m) < config.duplication_prob
            dup[prev_kps.shape[0]:] = False  # slot-wise copy needs a source slot
            kps = np.empty((m, 4), dtype=np.int64)
            desc = np.empty((m, p), dtype=np.uint8)
            n_dup = int(dup.sum())
            if n_dup:
                src = np.flatnonzero(dup)
                k = prev_kps[src].copy()
                if config.drift:
                    k[:, :3] += rng.integers(-config.drift, config.drift + 1, (n_dup, 3))
                    k[:, 0] = np.clip(k[:, 0], 0, xmax - 1)
                    k[:, 1] = np.clip(k[:, 1], 0, ymax - 1)
                    k[:, 2] = np.clip(k[:, 2], 0, smax)
                    k[:, 3] = (k[:, 3] + rng.integers(-1, 2, n_dup)) % ORIENT_BINS
                d = prev_desc[src] ^ (rng.random((n_dup, p)) < config.flip_prob)
                kps[dup], desc[dup] = k, d.astype(np.uint8)
            n_new = m - n_dup
            if n_new:
                kps[~dup], desc[~dup] = fresh(n_new)
        frames.append(FrameFeatures.from_arrays(n, kps.astype(np.int32), desc))
        prev_kps, prev_desc = kps, desc

    return FeatureStream(
        descriptor_length=p,
        frames=frames,
        metadata={"width": str(config.width), "height": str(config.height), "seed": str(config.seed)},
    )
