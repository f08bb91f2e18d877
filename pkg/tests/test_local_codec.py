import numpy as np
import pytest

from bfcodec.codebooks import train_local_codebooks
from bfcodec.errors import ConfigError, StreamError, TruncatedBitstream
from bfcodec.features import (
    BinaryDescriptor,
    FeatureStream,
    FrameFeatures,
    LocalFeature,
    QuantizedKeypoint,
    SynthConfig,
    synth_stream,
)
from bfcodec.local_codec import (
    EncoderConfig,
    FLAG_INTER,
    decode_frame,
    decode_stream,
    encode_frame,
    encode_stream,
    find_reference,
    project_stream,
    read_bitstream,
    select_dexels,
    serialize_bitstream,
    stream_rate_summary,
    write_bitstream,
)


def _feature(x, y, s, o, bits):
    return LocalFeature(QuantizedKeypoint(x, y, s, o), BinaryDescriptor(np.asarray(bits, np.uint8)))


class TestSelectDexels:
    def test_identity_full_k(self):
        d = BinaryDescriptor(np.array([1, 0, 1, 1], np.uint8))
        out = select_dexels(d, np.arange(4), 4)
        assert out == d

    def test_hand_indexing(self):
        # input bits (bit0..bit3) = 0,1,0,1; selection [3,1,0,2], K=2 -> (1, 1)
        d = BinaryDescriptor(np.array([0, 1, 0, 1], np.uint8))
        out = select_dexels(d, np.array([3, 1, 0, 2]), 2)
        assert list(out.bits) == [1, 1]

    @pytest.mark.parametrize("k", [512, 256, 128, 64, 32, 16, 8])
    def test_paper_k_grid_accepted(self, k):
        d = BinaryDescriptor(np.zeros(512, np.uint8))
        assert len(select_dexels(d, np.arange(512), k)) == k

    def test_k_too_large(self):
        d = BinaryDescriptor(np.zeros(4, np.uint8))
        with pytest.raises(ConfigError):
            select_dexels(d, np.arange(4), 5)


class TestFindReference:
    def test_identical_feature_zero_distance(self, codec_config):
        bits = np.zeros(32, np.uint8)
        f = _feature(100, 100, 8, 0, bits)
        ref = FrameFeatures(0, [_feature(400, 400, 8, 0, 1 - bits), _feature(100, 100, 8, 0, bits)])
        result = find_reference(f, ref, codec_config)
        assert result is not None
        idx, cost = result
        assert idx == 1
        # zero Hamming distance: the cost is purely lambda * location rate
        assert cost < codec_config.lam * 40

    def test_empty_reference(self, codec_config):
        f = _feature(0, 0, 0, 0, np.zeros(32, np.uint8))
        assert find_reference(f, FrameFeatures(0, []), codec_config) is None

    def test_outside_window_is_none(self, codec_config):
        bits = np.zeros(32, np.uint8)
        f = _feature(0, 0, 8, 0, bits)
        ref = FrameFeatures(0, [_feature(4000, 4000, 8, 0, bits)])
        assert find_reference(f, ref, codec_config) is None

    def test_lambda_zero_matches_exhaustive_hamming(self, train_stream, rng):
        intra, inter = train_local_codebooks(train_stream, k=32)
        conf = EncoderConfig(intra, inter, lam=0.0, width=640, height=480)
        for _ in range(20):
            bits = (rng.random(32) < 0.5).astype(np.uint8)
            f = _feature(200, 200, 8, 0, bits)
            cands = []
            for i in range(5):
                cb = (rng.random(32) < 0.5).astype(np.uint8)
                cands.append(_feature(int(200 + rng.integers(-30, 30)),
                                      int(200 + rng.integers(-30, 30)), 8, 0, cb))
            ref = FrameFeatures(0, cands)
            got = find_reference(f, ref, conf)
            dists = [int(np.sum(bits != c.descriptor.bits)) for c in cands]
            want = int(np.argmin(dists))       # ties to lowest index
            assert got is not None and got[0] == want


class TestRoundTrip:
    @pytest.mark.parametrize("mode", ["intra", "inter", "auto"])
    def test_lossless_stream(self, mode, test_stream, codec_config):
        es = encode_stream(test_stream, codec_config, mode)
        decoded = decode_stream(es, codec_config)
        conf = codec_config if mode != "intra" else codec_config.intra_only()
        assert decoded == project_stream(test_stream, conf)

    def test_no_reference_means_all_intra(self, test_stream, codec_config):
        ef = encode_frame(test_stream.frames[3], None, codec_config, "auto")
        assert not np.any(ef.flags == FLAG_INTER)
        decoded = decode_frame(ef, None, codec_config)
        assert len(decoded) == len(test_stream.frames[3])

    def test_empty_frame(self, codec_config):
        fr = FrameFeatures(0, [])
        ef = encode_frame(fr, None, codec_config, "auto")
        assert ef.payload == b""
        assert len(decode_frame(ef, None, codec_config)) == 0

    def test_streaming_decode_needs_only_previous_frame(self, codec_config):
        stream = synth_stream(SynthConfig(descriptor_length=64, frames=50, features_per_frame=8,
                                          duplication_prob=0.9, flip_prob=0.02, drift=3, seed=77))
        es = encode_stream(stream, codec_config, "auto")
        reference = None
        for ef in es.frames:
            reference = decode_frame(ef, reference, codec_config)
        whole = decode_stream(es, codec_config)
        assert whole.frames[-1].features == reference.features

    def test_duplicate_frame_goes_full_inter(self, codec_config):
        # frame identical to its reference, trained on near-duplicate data
        stream = synth_stream(SynthConfig(descriptor_length=64, frames=2, features_per_frame=20,
                                          duplication_prob=1.0, flip_prob=0.0, drift=0, seed=5))
        es = encode_stream(stream, codec_config, "auto")
        f1 = es.frames[1]
        assert np.all(f1.flags == FLAG_INTER)
        k = codec_config.K
        assert f1.report.descriptor_bits.mean() < 0.1 * k

    def test_k_projection_applied(self, test_stream, codec_config):
        es = encode_stream(test_stream, codec_config, "auto")
        decoded = decode_stream(es, codec_config)
        assert decoded.descriptor_length == codec_config.K == 32


class TestModeDecision:
    def test_chosen_cost_never_exceeds_alternative(self, test_stream, codec_config):
        es = encode_stream(test_stream, codec_config, "auto")
        for ef in es.frames:
            rep = ef.report
            for i in range(ef.feature_count):
                ji, je = rep.j_intra[i], rep.j_inter[i]
                chosen = je if ef.flags[i] == FLAG_INTER else ji
                other = ji if ef.flags[i] == FLAG_INTER else je
                assert chosen <= other or not np.isfinite(other)

    @pytest.mark.parametrize("lam", [0.0, 0.5, 1.0, 2.0, 8.0])
    def test_lambda_sweep_preserves_pointwise_optimality(self, test_stream, train_stream, lam):
        intra, inter = train_local_codebooks(train_stream, k=32)
        conf = EncoderConfig(intra, inter, lam=lam, width=640, height=480)
        es = encode_stream(test_stream, conf, "auto")
        for ef in es.frames:
            sel = ef.flags == FLAG_INTER
            assert np.all(ef.report.j_inter[sel] < ef.report.j_intra[sel])
            keep = ~sel & np.isfinite(ef.report.j_inter)
            assert np.all(ef.report.j_intra[keep] <= ef.report.j_inter[keep])

    def test_inter_beats_intra_on_correlated_stream(self, test_stream, codec_config):
        intra_rate = stream_rate_summary(encode_stream(test_stream, codec_config, "intra"))
        inter_rate = stream_rate_summary(encode_stream(test_stream, codec_config, "inter"))
        assert (
            inter_rate["descriptor_bits_per_feature"]
            < intra_rate["descriptor_bits_per_feature"]
        )


class TestRateAccounting:
    def test_exact_per_feature_accounting(self, test_stream, codec_config):
        es = encode_stream(test_stream, codec_config, "auto")
        for ef in es.frames:
            assert int(ef.report.total_bits().sum()) == ef.report.payload_bits
            assert ef.report.payload_bits == 8 * len(ef.payload)


class TestBitstreamContainer:
    def test_file_round_trip(self, tmp_path, test_stream, codec_config):
        es = encode_stream(test_stream, codec_config, "auto")
        path = tmp_path / "s.bfe"
        write_bitstream(es, path)
        es2 = read_bitstream(path)
        assert serialize_bitstream(es2) == serialize_bitstream(es)
        assert decode_stream(es2, codec_config) == decode_stream(es, codec_config)

    def test_digest_mismatch_rejected(self, test_stream, codec_config, train_stream):
        es = encode_stream(test_stream, codec_config, "auto")
        other_intra, other_inter = train_local_codebooks(train_stream, k=32, window=(32, 32, 2))
        other = EncoderConfig(other_intra, other_inter, lam=1.0, width=640, height=480)
        with pytest.raises(StreamError):
            decode_stream(es, other)

    def test_truncated_payload(self, test_stream, codec_config):
        es = encode_stream(test_stream, codec_config, "intra")
        bad = es.frames[2]
        bad.payload = bad.payload[: max(len(bad.payload) // 8, 1)]
        with pytest.raises(TruncatedBitstream):
            decode_stream(es, codec_config)

    def test_descriptor_length_mismatch(self, codec_config):
        stream = synth_stream(SynthConfig(descriptor_length=48, frames=2, features_per_frame=3, seed=1))
        with pytest.raises(StreamError):
            encode_stream(stream, codec_config, "auto")

    def test_inter_mode_without_codebook(self, test_stream, codec_config):
        intra_only = codec_config.intra_only()
        with pytest.raises(ConfigError):
            encode_stream(test_stream, intra_only, "inter")


class TestCanonicalOrder:
    def test_projection_is_sorted_and_stable(self, test_stream, codec_config):
        proj = project_stream(test_stream, codec_config)
        for fr in proj.frames:
            kp = fr.keypoint_array()
            keys = list(zip(kp[:, 1], kp[:, 0], kp[:, 2], kp[:, 3]))
            assert keys == sorted(keys)

    def test_encoding_invariant_to_input_order(self, test_stream, codec_config, rng):
        shuffled_frames = []
        for fr in test_stream.frames:
            feats = list(fr.features)
            order = rng.permutation(len(feats))
            shuffled_frames.append(FrameFeatures(fr.frame_index, [feats[i] for i in order]))
        shuffled = FeatureStream(test_stream.descriptor_length, shuffled_frames, test_stream.metadata)
        a = encode_stream(test_stream, codec_config, "auto")
        b = encode_stream(shuffled, codec_config, "auto")
        assert serialize_bitstream(a) == serialize_bitstream(b)
