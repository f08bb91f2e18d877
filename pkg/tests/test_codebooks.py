import numpy as np
import pytest

from bfcodec.codebooks import (
    BovwInterCodebook,
    BovwIntraCodebook,
    LocalInterCodebook,
    LocalIntraCodebook,
    codebook_digest,
    deserialize_codebook,
    read_codebook,
    serialize_codebook,
    train_bovw_codebooks,
    train_local_codebooks,
    write_codebook,
)
from bfcodec.errors import ConfigError, FormatError
from bfcodec.features import SynthConfig, synth_stream


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    stream = synth_stream(
        SynthConfig(descriptor_length=48, frames=10, features_per_frame=15,
                    duplication_prob=0.8, flip_prob=0.05, drift=3, seed=42)
    )
    return train_local_codebooks(stream, k=24)


class TestLocalSidecars:
    def test_intra_round_trip(self, trained):
        intra, _ = trained
        back = deserialize_codebook(serialize_codebook(intra))
        assert isinstance(back, LocalIntraCodebook)
        assert back.P == intra.P and back.K == intra.K
        assert np.array_equal(back.selection, intra.selection)
        assert np.array_equal(back.perm.order, intra.perm.order)

    def test_inter_round_trip(self, trained):
        _, inter = trained
        back = deserialize_codebook(serialize_codebook(inter))
        assert isinstance(back, LocalInterCodebook)
        assert back.window == inter.window
        assert np.array_equal(back.perm.order, inter.perm.order)

    def test_reload_is_bit_identical(self, trained):
        # quantized tables survive the float round trip exactly
        intra, inter = trained
        for cb in (intra, inter):
            blob = serialize_codebook(cb)
            assert serialize_codebook(deserialize_codebook(blob)) == blob

    def test_digest_stable_across_reload(self, trained):
        intra, inter = trained
        a = codebook_digest(intra, inter, b"params")
        b = codebook_digest(
            deserialize_codebook(serialize_codebook(intra)),
            deserialize_codebook(serialize_codebook(inter)),
            b"params",
        )
        assert a == b
        assert a != codebook_digest(intra, inter, b"other")

    def test_file_io(self, trained, tmp_path):
        intra, _ = trained
        path = tmp_path / "cb.bfcb"
        write_codebook(intra, path)
        assert serialize_codebook(read_codebook(path)) == serialize_codebook(intra)

    def test_bad_magic_and_kind(self):
        with pytest.raises(FormatError):
            deserialize_codebook(b"NOPE" + b"\0" * 10)
        blob = bytearray(serialize_codebook(train_bovw_codebooks(np.zeros((2, 4), np.int64), 0.1)[0]))
        blob[6] = 77
        with pytest.raises(FormatError):
            deserialize_codebook(bytes(blob))

    def test_truncated_payload(self, trained):
        intra, _ = trained
        blob = serialize_codebook(intra)
        with pytest.raises(FormatError):
            deserialize_codebook(blob[: len(blob) // 2])


class TestBovwSidecars:
    def test_round_trips(self):
        seq = np.clip(np.random.default_rng(0).integers(0, 6, (40, 12)), 0, 15)
        intra, inter = train_bovw_codebooks(seq, delta=0.05)
        for cb, cls in ((intra, BovwIntraCodebook), (inter, BovwInterCodebook)):
            back = deserialize_codebook(serialize_codebook(cb))
            assert isinstance(back, cls)
            assert back.V == cb.V and back.delta == cb.delta
            assert serialize_codebook(back) == serialize_codebook(cb)

    def test_needs_data(self):
        with pytest.raises(ConfigError):
            train_bovw_codebooks(np.zeros((0, 4), np.int64), delta=0.1)


class TestTrainLocal:
    def test_k_exceeding_selection(self):
        stream = synth_stream(SynthConfig(descriptor_length=16, frames=3, features_per_frame=4, seed=1))
        with pytest.raises(ConfigError):
            train_local_codebooks(stream, k=8, selection=np.arange(4))

    def test_scale_alphabet_overflow(self):
        stream = synth_stream(
            SynthConfig(descriptor_length=16, frames=3, features_per_frame=4,
                        scale_range=(300, 400), seed=1)
        )
        with pytest.raises(ConfigError):
            train_local_codebooks(stream, k=16, scale_alphabet=256)

    def test_empty_stream_rejected(self):
        stream = synth_stream(SynthConfig(descriptor_length=16, frames=0, seed=1))
        with pytest.raises(ConfigError):
            train_local_codebooks(stream, k=16)

    def test_single_frame_gives_uniform_inter_tables(self):
        # no matched pairs: displacement tables fall back to smoothed uniform
        stream = synth_stream(SynthConfig(descriptor_length=16, frames=1, features_per_frame=5, seed=2))
        _, inter = train_local_codebooks(stream, k=16)
        assert np.allclose(inter.dx_table.probs, inter.dx_table.probs[0])

    def test_selection_subsets_dexels(self):
        stream = synth_stream(SynthConfig(descriptor_length=32, frames=4, features_per_frame=6, seed=3))
        selection = np.array([5, 1, 30, 2, 8, 9, 17, 4])
        intra, inter = train_local_codebooks(stream, k=8, selection=selection)
        assert np.array_equal(intra.selection, selection)
        assert intra.perm.P == 8
