"""Intra/inter-frame codec for local binary feature streams.

A frame is coded as one range-coder payload: per feature a mode flag,
then either the quantized location (fixed-length x/y bits plus trained
scale/orientation tables) and the reordered descriptor, or a reference
identifier, the keypoint displacement, and the reordered XOR residual.
Features are coded in (y, x) raster order so encoder and decoder agree
on record order; decoded streams are K-dexel projections of the input,
bit-exact.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import rangecoder as rc
from .codebooks import LocalInterCodebook, LocalIntraCodebook, codebook_digest
from .errors import ConfigError, FormatError, IoError, StreamError, SymbolError, TruncatedBitstream
from .features import BinaryDescriptor, FeatureStream, FrameFeatures

MAGIC = b"BFE1"
VERSION = 1

MODE_INTRA, MODE_INTER, MODE_AUTO = 0, 1, 2
_MODES = {"intra": MODE_INTRA, "inter": MODE_INTER, "auto": MODE_AUTO}
_MODE_NAMES = {v: k for k, v in _MODES.items()}

FLAG_INTRA, FLAG_INTER = 0, 1

CTX_FAIR, CTX_SCALE, CTX_THETA = 0, 1, 2


def select_dexels(descriptor: BinaryDescriptor, selection, k: int) -> BinaryDescriptor:
    """Project a descriptor onto its K most discriminative dexels."""
    selection = np.asarray(selection, dtype=np.int64)
    if k > selection.shape[0]:
        raise ConfigError(f"K {k} exceeds selection length {selection.shape[0]}")
    sel = selection[:k]
    if sel.size and (sel.min() < 0 or sel.max() >= len(descriptor)):
        raise ConfigError("selection indices outside descriptor length")
    return BinaryDescriptor(descriptor.bits[sel])


@dataclass
class EncoderConfig:
    """Codebooks plus rate parameters; shared verbatim by the decoder."""

    intra: LocalIntraCodebook
    inter: LocalInterCodebook | None
    lam: float = 1.0
    width: int = 640
    height: int = 480

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError("lambda must be non-negative")
        if self.width <= 0 or self.height <= 0:
            raise ConfigError("frame dimensions must be positive")
        if self.inter is not None:
            if self.inter.K != self.intra.K or self.inter.P != self.intra.P:
                raise ConfigError("intra/inter codebooks disagree on P or K")
            if not np.array_equal(self.inter.selection, self.intra.selection):
                raise ConfigError("intra/inter codebooks disagree on dexel selection")
            if min(self.inter.window) < 0:
                raise ConfigError("window components must be non-negative")
        self._build()

    def _build(self):
        k = self.intra.K
        self.K = k
        self.P = self.intra.P
        self.selection = np.asarray(self.intra.selection, dtype=np.int64)
        self.window = self.inter.window if self.inter is not None else (0, 0, 0)
        self.nx = max(1, math.ceil(math.log2(4 * self.width)))
        self.ny = max(1, math.ceil(math.log2(4 * self.height)))

        rows = [rc.FAIR_BIT_FREQS.copy()]
        rows += self.intra.scale_table.freq_rows()
        rows += self.intra.theta_table.freq_rows()
        if self.inter is not None:
            self.ctx_dx = len(rows)
            rows += self.inter.dx_table.freq_rows()
            self.ctx_dy = len(rows)
            rows += self.inter.dy_table.freq_rows()
            self.ctx_ds = len(rows)
            rows += self.inter.ds_table.freq_rows()
            self.ctx_dth = len(rows)
            rows += self.inter.dtheta_table.freq_rows()
        else:
            self.ctx_dx = self.ctx_dy = self.ctx_ds = self.ctx_dth = 0
        self.intra_base = len(rows)
        rows += self.intra.perm.freq_rows()
        if self.inter is not None:
            self.inter_base = len(rows)
            rows += self.inter.perm.freq_rows()
        else:
            self.inter_base = 0
        self.cumfreq, self.alens = rc.build_cumfreq(rows)

        self.intra_order = np.asarray(self.intra.perm.order, dtype=np.int64)
        self.intra_lens = self.intra.perm.code_lengths()
        self.scale_lens = self.intra.scale_table.code_lengths()
        self.theta_lens = self.intra.theta_table.code_lengths()
        if self.inter is not None:
            self.inter_order = np.asarray(self.inter.perm.order, dtype=np.int64)
            self.inter_lens = self.inter.perm.code_lengths()
            self.dx_lens = self.inter.dx_table.code_lengths()
            self.dy_lens = self.inter.dy_table.code_lengths()
            self.ds_lens = self.inter.ds_table.code_lengths()
            self.dth_lens = self.inter.dtheta_table.code_lengths()
        else:
            self.inter_order = np.zeros(0, dtype=np.int64)
            self.inter_lens = np.zeros((0, 2))
        # context offsets of chain positions: 0 for the first, 2k + prev after
        pos = np.arange(k, dtype=np.int64)
        self._chain_off = np.where(pos == 0, 0, 2 * pos)
        self._digest = None

    def intra_only(self) -> "EncoderConfig":
        if self.inter is None:
            return self
        return EncoderConfig(self.intra, None, self.lam, self.width, self.height)

    def digest(self) -> bytes:
        if self._digest is None:
            params = struct.pack(
                "<HHdHHHHH", self.P, self.K, self.lam, *self.window, self.width, self.height
            )
            self._digest = codebook_digest(self.intra, self.inter, params)
        return self._digest


@dataclass
class FrameRateReport:
    """Exact per-feature bit accounting (checkpoint deltas of the coder)."""

    flag_bits: np.ndarray
    location_bits: np.ndarray      # intra location or inter identifier+displacement
    descriptor_bits: np.ndarray    # last feature absorbs the coder flush
    payload_bits: int
    j_intra: np.ndarray            # modeled costs driving the mode decision
    j_inter: np.ndarray            # inf where no candidate was available

    def total_bits(self) -> np.ndarray:
        return self.flag_bits + self.location_bits + self.descriptor_bits


@dataclass
class EncodedFrame:
    frame_index: int
    feature_count: int
    payload: bytes
    flags: np.ndarray | None = None
    report: FrameRateReport | None = None


# --- canonical feature order ----------------------------------------------------

def _canonical_order(kp: np.ndarray, desc: np.ndarray) -> np.ndarray:
    if kp.shape[0] <= 1:
        return np.arange(kp.shape[0])
    packed = np.packbits(desc, axis=1, bitorder="little")
    keys = [packed[:, j] for j in range(packed.shape[1] - 1, -1, -1)]
    keys += [kp[:, 3], kp[:, 2], kp[:, 0], kp[:, 1]]   # last key (y) is primary
    return np.lexsort(keys)


def project_stream(stream: FeatureStream, config: EncoderConfig) -> FeatureStream:
    """K-dexel projection in canonical coding order: the decoder's view of a stream."""
    sel = config.selection[: config.K]
    frames = []
    for fr in stream.frames:
        kp = fr.keypoint_array().astype(np.int64)
        desc = fr.descriptor_matrix()
        desc = desc[:, sel] if desc.size else np.zeros((0, config.K), np.uint8)
        order = _canonical_order(kp, desc)
        frames.append(FrameFeatures.from_arrays(fr.frame_index, kp[order].astype(np.int32), desc[order]))
    return FeatureStream(
        descriptor_length=config.K,
        frames=frames,
        metadata={"width": str(config.width), "height": str(config.height)},
    )


# --- reference matching ----------------------------------------------------------

def _id_bits(m_ref: int) -> int:
    return max(0, math.ceil(math.log2(m_ref))) if m_ref > 1 else 0

def _hamming_matrix(cur: np.ndarray, ref: np.ndarray) -> np.ndarray:
    c = cur.astype(np.float64)
    r = ref.astype(np.float64)
    return c @ (1.0 - r.T) + (1.0 - c) @ r.T


def _match_frame(kp, desc, ref_kp, ref_desc, config):
    """Rate-aware reference search (distance + lambda * location rate).

    Returns (l_star, sel_cost, rp_inter) with l_star = -1 where the window
    holds no candidate.
    """
    m, mr = kp.shape[0], ref_kp.shape[0]
    if m == 0 or mr == 0 or config.inter is None:
        return (
            np.full(m, -1, dtype=np.int64),
            np.full(m, np.inf),
            np.full(m, np.inf),
        )
    wx, wy, ws = config.window
    dx = kp[:, 0:1] - ref_kp[None, :, 0]
    dy = kp[:, 1:2] - ref_kp[None, :, 1]
    ds = kp[:, 2:3] - ref_kp[None, :, 2]
    dth = (kp[:, 3:4] - ref_kp[None, :, 3]) % 32
    in_window = (np.abs(dx) <= wx) & (np.abs(dy) <= wy) & (np.abs(ds) <= ws)
    ham = _hamming_matrix(desc, ref_desc)
    # clipped lookups are garbage outside the window; the mask discards them
    rp = (
        _id_bits(mr)
        + config.dx_lens[np.clip(dx + wx, 0, 2 * wx)]
        + config.dy_lens[np.clip(dy + wy, 0, 2 * wy)]
        + config.ds_lens[np.clip(ds + ws, 0, 2 * ws)]
        + config.dth_lens[dth]
    )
    cost = np.where(in_window, ham + config.lam * rp, np.inf)
    l_star = np.argmin(cost, axis=1)
    best = cost[np.arange(m), l_star]
    l_star[~np.isfinite(best)] = -1
    rp_best = rp[np.arange(m), np.maximum(l_star, 0)]
    rp_best[l_star < 0] = np.inf
    return l_star, best, rp_best


def find_reference(feature, reference_frame: FrameFeatures, config: EncoderConfig):
    """Best in-window reference for one K-dexel feature, or None.

    Cost is Hamming distance plus lambda times the modeled identifier and
    displacement rate; ties go to the lowest reference index.
    """
    kp = np.array(
        [[feature.keypoint.x, feature.keypoint.y, feature.keypoint.scale, feature.keypoint.orientation]],
        dtype=np.int64,
    )
    desc = feature.descriptor.bits[None, :]
    ref_kp = reference_frame.keypoint_array().astype(np.int64)
    ref_desc = reference_frame.descriptor_matrix()
    if ref_desc.size and ref_desc.shape[1] != desc.shape[1]:
        raise StreamError(
            f"descriptor length {desc.shape[1]} != reference length {ref_desc.shape[1]}"
        )
    l_star, cost, _ = _match_frame(kp, desc, ref_kp, ref_desc, config)
    if l_star[0] < 0:
        return None
    return int(l_star[0]), float(cost[0])


# --- modeled rates ----------------------------------------------------------------

def _chain_bits(desc: np.ndarray, order: np.ndarray, chain_off: np.ndarray):
    bits = desc[:, order].astype(np.int64)
    prev = np.zeros_like(bits)
    prev[:, 1:] = bits[:, :-1]
    return bits, chain_off[None, :] + prev


def _modeled_desc_bits(desc, order, chain_off, lens) -> np.ndarray:
    bits, ctx = _chain_bits(desc, order, chain_off)
    return lens[ctx, bits].sum(axis=1)


# --- frame encoding ----------------------------------------------------------------

def _fixed_bits(values: np.ndarray, nbits: int) -> np.ndarray:
    shifts = np.arange(nbits - 1, -1, -1, dtype=np.int64)
    return (values[:, None] >> shifts[None, :]) & 1


def _encode_frame_arrays(kp, desc, ref_kp, ref_desc, config, mode):
    """Core encoder over canonical-order arrays.  Returns (payload, flags, report)."""
    m, k = kp.shape[0], config.K
    nx, ny = config.nx, config.ny
    if m == 0:
        empty = np.zeros(0, dtype=np.int64)
        report = FrameRateReport(empty, empty, empty, 0, empty.astype(float), empty.astype(float))
        return b"", np.zeros(0, dtype=np.uint8), report

    if np.any(kp[:, 0] >= (1 << nx)) or np.any(kp[:, 1] >= (1 << ny)):
        raise StreamError("keypoint coordinates exceed the frame dimensions")
    if np.any(kp[:, 2] >= config.intra.scale_table.alphabet):
        raise SymbolError(
            f"scale {int(kp[:, 2].max())} outside trained alphabet "
            f"{config.intra.scale_table.alphabet}"
        )

    j_intra = (
        nx + ny
        + config.scale_lens[kp[:, 2]]
        + config.theta_lens[kp[:, 3]]
        + _modeled_desc_bits(desc, config.intra_order, config._chain_off, config.intra_lens)
    )
    mr = ref_kp.shape[0]
    if mode != MODE_INTRA and mr > 0 and config.inter is not None:
        l_star, _, rp_inter = _match_frame(kp, desc, ref_kp, ref_desc, config)
        has = l_star >= 0
        residual = np.zeros_like(desc)
        residual[has] = desc[has] ^ ref_desc[l_star[has]]
        j_inter = np.full(m, np.inf)
        if has.any():
            j_inter[has] = rp_inter[has] + _modeled_desc_bits(
                residual[has], config.inter_order, config._chain_off, config.inter_lens
            )
    else:
        l_star = np.full(m, -1, dtype=np.int64)
        residual = np.zeros_like(desc)
        j_inter = np.full(m, np.inf)

    if mode == MODE_INTRA:
        flags = np.zeros(m, dtype=np.uint8)
    elif mode == MODE_INTER:
        flags = (l_star >= 0).astype(np.uint8)
    else:
        flags = ((l_star >= 0) & (j_inter < j_intra)).astype(np.uint8)

    idbits = _id_bits(mr)
    li = 1 + nx + ny + 2 + k
    le = 1 + idbits + 4 + k
    lens = np.where(flags == FLAG_INTRA, li, le)
    offs = np.concatenate([[0], np.cumsum(lens)])
    total = int(offs[-1])
    sym = np.empty(total, dtype=np.int64)
    ctx = np.empty(total, dtype=np.int64)

    ii = np.flatnonzero(flags == FLAG_INTRA)
    if ii.size:
        bits, chain_ctx = _chain_bits(desc[ii], config.intra_order, config._chain_off)
        block_s = np.concatenate(
            [
                np.zeros((ii.size, 1), dtype=np.int64),
                _fixed_bits(kp[ii, 0], nx),
                _fixed_bits(kp[ii, 1], ny),
                kp[ii, 2:3],
                kp[ii, 3:4],
                bits,
            ],
            axis=1,
        )
        block_c = np.concatenate(
            [
                np.full((ii.size, 1 + nx + ny), CTX_FAIR, dtype=np.int64),
                np.full((ii.size, 1), CTX_SCALE, dtype=np.int64),
                np.full((ii.size, 1), CTX_THETA, dtype=np.int64),
                config.intra_base + chain_ctx,
            ],
            axis=1,
        )
        pos = offs[ii, None] + np.arange(li)[None, :]
        sym[pos] = block_s
        ctx[pos] = block_c

    ee = np.flatnonzero(flags == FLAG_INTER)
    if ee.size:
        wx, wy, ws = config.window
        ref = l_star[ee]
        bits, chain_ctx = _chain_bits(residual[ee], config.inter_order, config._chain_off)
        dxs = kp[ee, 0] - ref_kp[ref, 0] + wx
        dys = kp[ee, 1] - ref_kp[ref, 1] + wy
        dss = kp[ee, 2] - ref_kp[ref, 2] + ws
        dth = (kp[ee, 3] - ref_kp[ref, 3]) % 32
        block_s = np.concatenate(
            [
                np.ones((ee.size, 1), dtype=np.int64),
                _fixed_bits(ref, idbits) if idbits else np.zeros((ee.size, 0), dtype=np.int64),
                dxs[:, None], dys[:, None], dss[:, None], dth[:, None],
                bits,
            ],
            axis=1,
        )
        block_c = np.concatenate(
            [
                np.full((ee.size, 1 + idbits), CTX_FAIR, dtype=np.int64),
                np.full((ee.size, 1), config.ctx_dx, dtype=np.int64),
                np.full((ee.size, 1), config.ctx_dy, dtype=np.int64),
                np.full((ee.size, 1), config.ctx_ds, dtype=np.int64),
                np.full((ee.size, 1), config.ctx_dth, dtype=np.int64),
                config.inter_base + chain_ctx,
            ],
            axis=1,
        )
        pos = offs[ee, None] + np.arange(le)[None, :]
        sym[pos] = block_s
        ctx[pos] = block_c

    loc_len = np.where(flags == FLAG_INTRA, 1 + nx + ny + 2, 1 + idbits + 4)
    marks = np.stack([offs[:-1], offs[:-1] + 1, offs[:-1] + loc_len], axis=1).ravel()
    payload, total_bits, markbits = rc.encode_symbols(sym, ctx, config.cumfreq, config.alens, marks)
    payload_bits = 8 * len(payload)
    cp = np.concatenate([markbits, [payload_bits]])
    starts, after_flag, after_loc = cp[0::3][:m], cp[1::3], cp[2::3]
    next_start = np.concatenate([starts[1:], [payload_bits]])
    report = FrameRateReport(
        flag_bits=(after_flag - starts).astype(np.int64),
        location_bits=(after_loc - after_flag).astype(np.int64),
        descriptor_bits=(next_start - after_loc).astype(np.int64),
        payload_bits=payload_bits,
        j_intra=j_intra,
        j_inter=j_inter,
    )
    return payload, flags, report


def encode_frame(
    frame: FrameFeatures,
    reference: FrameFeatures | None,
    config: EncoderConfig,
    mode: str = "auto",
) -> EncodedFrame:
    """Encode one frame against an optional decoded reference frame.

    `frame` carries raw P-dexel descriptors (the selection is applied
    here); `reference` is the decoder's view of the previous frame.
    """
    mode_id = _MODES[mode] if isinstance(mode, str) else int(mode)
    kp = frame.keypoint_array().astype(np.int64)
    desc = frame.descriptor_matrix()
    if desc.size:
        if desc.shape[1] == config.P:
            desc = desc[:, config.selection[: config.K]]
        elif desc.shape[1] != config.K:
            raise StreamError(f"descriptor length {desc.shape[1]} matches neither P nor K")
    else:
        desc = np.zeros((0, config.K), dtype=np.uint8)
    order = _canonical_order(kp, desc)
    kp, desc = kp[order], desc[order]
    if reference is not None:
        ref_kp = reference.keypoint_array().astype(np.int64)
        ref_desc = reference.descriptor_matrix()
        if ref_desc.size and ref_desc.shape[1] != config.K:
            raise StreamError("reference descriptors must be K-dexel (decoded) features")
    else:
        ref_kp = np.zeros((0, 4), dtype=np.int64)
        ref_desc = np.zeros((0, config.K), dtype=np.uint8)
    payload, flags, report = _encode_frame_arrays(kp, desc, ref_kp, ref_desc, config, mode_id)
    return EncodedFrame(
        frame_index=frame.frame_index,
        feature_count=kp.shape[0],
        payload=payload,
        flags=flags,
        report=report,
    )


# --- frame decoding ----------------------------------------------------------------

@njit(cache=True)
def _decode_frame_kernel(
    data, navail, m, k, nx, ny, idbits,
    wx, wy, ws, has_inter,
    cumfreq, alens,
    ctx_scale, ctx_theta, ctx_dx, ctx_dy, ctx_ds, ctx_dth,
    intra_base, inter_base,
    intra_order, inter_order,
    ref_kp, ref_desc,
    out_kp, out_desc, out_flags,
):
    allow = navail + rc.READAHEAD_BITS
    low, high, code, pos = rc._dec_init(data, navail)
    for i in range(m):
        flag, low, high, code, pos, ok = rc._dec_sym(
            data, navail, allow, low, high, code, pos, cumfreq, CTX_FAIR, 2
        )
        if ok != rc.OK:
            return ok
        out_flags[i] = flag
        if flag == FLAG_INTRA:
            x = 0
            for _ in range(nx):
                b, low, high, code, pos, ok = rc._dec_sym(
                    data, navail, allow, low, high, code, pos, cumfreq, CTX_FAIR, 2
                )
                if ok != rc.OK:
                    return ok
                x = (x << 1) | b
            y = 0
            for _ in range(ny):
                b, low, high, code, pos, ok = rc._dec_sym(
                    data, navail, allow, low, high, code, pos, cumfreq, CTX_FAIR, 2
                )
                if ok != rc.OK:
                    return ok
                y = (y << 1) | b
            s, low, high, code, pos, ok = rc._dec_sym(
                data, navail, allow, low, high, code, pos, cumfreq, ctx_scale, alens[ctx_scale]
            )
            if ok != rc.OK:
                return ok
            th, low, high, code, pos, ok = rc._dec_sym(
                data, navail, allow, low, high, code, pos, cumfreq, ctx_theta, alens[ctx_theta]
            )
            if ok != rc.OK:
                return ok
            out_kp[i, 0], out_kp[i, 1], out_kp[i, 2], out_kp[i, 3] = x, y, s, th
            prev = 0
            for kk in range(k):
                ctx = intra_base if kk == 0 else intra_base + 2 * kk + prev
                b, low, high, code, pos, ok = rc._dec_sym(
                    data, navail, allow, low, high, code, pos, cumfreq, ctx, 2
                )
                if ok != rc.OK:
                    return ok
                out_desc[i, intra_order[kk]] = b
                prev = b
        else:
            if has_inter == 0:
                return 4
            rid = 0
            for _ in range(idbits):
                b, low, high, code, pos, ok = rc._dec_sym(
                    data, navail, allow, low, high, code, pos, cumfreq, CTX_FAIR, 2
                )
                if ok != rc.OK:
                    return ok
                rid = (rid << 1) | b
            if rid >= ref_kp.shape[0]:
                return 4
            dxs, low, high, code, pos, ok = rc._dec_sym(
                data, navail, allow, low, high, code, pos, cumfreq, ctx_dx, alens[ctx_dx]
            )
            if ok != rc.OK:
                return ok
            dys, low, high, code, pos, ok = rc._dec_sym(
                data, navail, allow, low, high, code, pos, cumfreq, ctx_dy, alens[ctx_dy]
            )
            if ok != rc.OK:
                return ok
            dss, low, high, code, pos, ok = rc._dec_sym(
                data, navail, allow, low, high, code, pos, cumfreq, ctx_ds, alens[ctx_ds]
            )
            if ok != rc.OK:
                return ok
            dth, low, high, code, pos, ok = rc._dec_sym(
                data, navail, allow, low, high, code, pos, cumfreq, ctx_dth, alens[ctx_dth]
            )
            if ok != rc.OK:
                return ok
            x = ref_kp[rid, 0] + dxs - wx
            y = ref_kp[rid, 1] + dys - wy
            s = ref_kp[rid, 2] + dss - ws
            th = (ref_kp[rid, 3] + dth) % 32
            if x < 0 or y < 0 or s < 0:
                return 4
            out_kp[i, 0], out_kp[i, 1], out_kp[i, 2], out_kp[i, 3] = x, y, s, th
            prev = 0
            for kk in range(k):
                ctx = inter_base if kk == 0 else inter_base + 2 * kk + prev
                b, low, high, code, pos, ok = rc._dec_sym(
                    data, navail, allow, low, high, code, pos, cumfreq, ctx, 2
                )
                if ok != rc.OK:
                    return ok
                out_desc[i, inter_order[kk]] = b
                prev = b
            for j in range(k):
                out_desc[i, j] ^= ref_desc[rid, j]
    return rc.OK


def _decode_frame_arrays(encoded: EncodedFrame, ref_kp, ref_desc, config):
    m, k = encoded.feature_count, config.K
    out_kp = np.zeros((m, 4), dtype=np.int64)
    out_desc = np.zeros((m, k), dtype=np.uint8)
    out_flags = np.zeros(m, dtype=np.uint8)
    if m == 0:
        return out_kp, out_desc, out_flags
    data = np.frombuffer(encoded.payload, dtype=np.uint8)
    status = _decode_frame_kernel(
        data, 8 * len(encoded.payload), m, k, config.nx, config.ny, _id_bits(ref_kp.shape[0]),
        *config.window,
        1 if config.inter is not None else 0,
        config.cumfreq, config.alens,
        CTX_SCALE, CTX_THETA, config.ctx_dx, config.ctx_dy,
        config.ctx_ds, config.ctx_dth,
        config.intra_base, config.inter_base,
        config.intra_order, config.inter_order if config.inter_order.size else np.zeros(k, np.int64),
        ref_kp, ref_desc,
        out_kp, out_desc, out_flags,
    )
    if status == rc.ERR_TRUNCATED:
        raise TruncatedBitstream(f"frame {encoded.frame_index}: payload exhausted")
    if status != rc.OK:
        raise StreamError(f"frame {encoded.frame_index}: corrupt record (status {status})")
    return out_kp, out_desc, out_flags


def decode_frame(
    encoded: EncodedFrame,
    reference: FrameFeatures | None,
    config: EncoderConfig,
) -> FrameFeatures:
    """Exact inverse of encode_frame given the same codebooks."""
    if reference is not None:
        ref_kp = reference.keypoint_array().astype(np.int64)
        ref_desc = reference.descriptor_matrix()
        if ref_desc.size == 0:
            ref_desc = np.zeros((ref_kp.shape[0], config.K), dtype=np.uint8)
    else:
        ref_kp = np.zeros((0, 4), dtype=np.int64)
        ref_desc = np.zeros((0, config.K), dtype=np.uint8)
    kp, desc, _ = _decode_frame_arrays(encoded, ref_kp, ref_desc, config)
    return FrameFeatures.from_arrays(encoded.frame_index, kp.astype(np.int32), desc)


# --- stream level --------------------------------------------------------------------

@dataclass
class EncodedStream:
    config_digest: bytes
    P: int
    K: int
    mode: int
    width: int
    height: int
    lam: float
    window: tuple[int, int, int]
    frames: list[EncodedFrame] = field(default_factory=list)

    def mode_name(self) -> str:
        return _MODE_NAMES[self.mode]

    def payload_bytes(self) -> int:
        return sum(len(f.payload) for f in self.frames)


def encode_stream(stream: FeatureStream, config: EncoderConfig, mode: str = "auto") -> EncodedStream:
    """Encode a whole stream; inter frames reference the previous decoded frame."""
    mode_id = _MODES[mode] if isinstance(mode, str) else int(mode)
    if mode_id == MODE_INTRA:
        config = config.intra_only()
    elif config.inter is None:
        raise ConfigError(f"mode {mode} requires an inter codebook")
    if stream.descriptor_length != config.P:
        raise StreamError(f"stream P {stream.descriptor_length} != codebook P {config.P}")
    sel = config.selection[: config.K]
    out = EncodedStream(
        config_digest=config.digest(),
        P=config.P, K=config.K, mode=mode_id,
        width=config.width, height=config.height,
        lam=config.lam, window=config.window,
    )
    prev_kp = prev_desc = None
    for fr in stream.frames:
        kp = fr.keypoint_array().astype(np.int64)
        desc = fr.descriptor_matrix()
        desc = desc[:, sel] if desc.size else np.zeros((0, config.K), np.uint8)
        order = _canonical_order(kp, desc)
        kp, desc = kp[order], desc[order]
        if mode_id == MODE_INTRA or prev_kp is None:
            ref_kp = np.zeros((0, 4), dtype=np.int64)
            ref_desc = np.zeros((0, config.K), dtype=np.uint8)
        else:
            ref_kp, ref_desc = prev_kp, prev_desc
        payload, flags, report = _encode_frame_arrays(kp, desc, ref_kp, ref_desc, config, mode_id)
        out.frames.append(
            EncodedFrame(fr.frame_index, kp.shape[0], payload, flags, report)
        )
        prev_kp, prev_desc = kp, desc       # lossless: decoded view == projected input
    return out


def decode_stream(encoded: EncodedStream, config: EncoderConfig) -> FeatureStream:
    if encoded.mode == MODE_INTRA:
        config = config.intra_only()
    if encoded.config_digest != config.digest():
        raise StreamError("codebook/config digest mismatch between bitstream and decoder")
    frames = []
    prev_kp = np.zeros((0, 4), dtype=np.int64)
    prev_desc = np.zeros((0, config.K), dtype=np.uint8)
    for ef in encoded.frames:
        kp, desc, _ = _decode_frame_arrays(ef, prev_kp, prev_desc, config)
        frames.append(FrameFeatures.from_arrays(ef.frame_index, kp.astype(np.int32), desc))
        prev_kp, prev_desc = kp, desc
    return FeatureStream(
        descriptor_length=config.K,
        frames=frames,
        metadata={"width": str(config.width), "height": str(config.height)},
    )


# --- bitstream container --------------------------------------------------------------

_BFE_HEADER = struct.Struct("<4sHHHBHHdHHHI16s")
_BFE_FRAME = struct.Struct("<III")


def serialize_bitstream(es: EncodedStream) -> bytes:
    out = bytearray()
    out += _BFE_HEADER.pack(
        MAGIC, VERSION, es.P, es.K, es.mode, es.width, es.height, es.lam,
        *es.window, len(es.frames), es.config_digest,
    )
    for f in es.frames:
        out += _BFE_FRAME.pack(f.frame_index, f.feature_count, len(f.payload))
        out += f.payload
    return bytes(out)


def deserialize_bitstream(blob: bytes) -> EncodedStream:
    if len(blob) < _BFE_HEADER.size:
        raise FormatError("truncated bitstream header", offset=len(blob))
    magic, version, p, k, mode, w, h, lam, wx, wy, ws, n, digest = _BFE_HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"bad bitstream magic {magic!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported bitstream version {version}", offset=4)
    es = EncodedStream(digest, p, k, mode, w, h, lam, (wx, wy, ws))
    off = _BFE_HEADER.size
    for _ in range(n):
        if len(blob) < off + _BFE_FRAME.size:
            raise FormatError("truncated frame chunk header", offset=off)
        fi, m, plen = _BFE_FRAME.unpack_from(blob, off)
        off += _BFE_FRAME.size
        if len(blob) < off + plen:
            raise FormatError("truncated frame payload", offset=off)
        es.frames.append(EncodedFrame(fi, m, blob[off:off + plen]))
        off += plen
    if off != len(blob):
        raise FormatError(f"{len(blob) - off} trailing bytes", offset=off)
    return es


def write_bitstream(es: EncodedStream, path) -> int:
    blob = serialize_bitstream(es)
    try:
        with open(path, "wb") as fh:
            fh.write(blob)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return len(blob)


def read_bitstream(path) -> EncodedStream:
    with open(path, "rb") as fh:
        return deserialize_bitstream(fh.read())


def stream_rate_summary(es: EncodedStream) -> dict:
    """Mean per-feature bit splits over a whole encoded stream."""
    n = sum(f.feature_count for f in es.frames)
    total_payload = 8 * es.payload_bytes()
    if n == 0:
        return {"features": 0, "payload_bits": total_payload}
    flag = sum(int(f.report.flag_bits.sum()) for f in es.frames if f.report)
    loc = sum(int(f.report.location_bits.sum()) for f in es.frames if f.report)
    desc = sum(int(f.report.descriptor_bits.sum()) for f in es.frames if f.report)
    inter = sum(int((f.flags == FLAG_INTER).sum()) for f in es.frames if f.flags is not None)
    return {
        "features": n,
        "payload_bits": total_payload,
        "bits_per_feature": total_payload / n,
        "flag_bits_per_feature": flag / n,
        "location_bits_per_feature": loc / n,
        "descriptor_bits_per_feature": desc / n,
        "inter_fraction": inter / n,
    }
