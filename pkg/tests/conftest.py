import numpy as np
import pytest

from bfcodec.codebooks import train_local_codebooks
from bfcodec.features import SynthConfig, synth_stream
from bfcodec.local_codec import EncoderConfig


CORRELATED = dict(
    descriptor_length=64,
    frames=12,
    features_per_frame=20,
    transition=((0.8, 0.2), (0.3, 0.7)),
    duplication_prob=0.9,
    flip_prob=0.02,
    drift=4,
)


@pytest.fixture(scope="session")
def train_stream():
    return synth_stream(SynthConfig(**CORRELATED, seed=100))


@pytest.fixture(scope="session")
def test_stream():
    return synth_stream(SynthConfig(**CORRELATED, seed=101))


@pytest.fixture(scope="session")
def codec_config(train_stream):
    intra, inter = train_local_codebooks(train_stream, k=32)
    return EncoderConfig(intra, inter, lam=1.0, width=640, height=480)


@pytest.fixture(scope="session")
def full_k_config(train_stream):
    intra, inter = train_local_codebooks(train_stream, k=64)
    return EncoderConfig(intra, inter, lam=1.0, width=640, height=480)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240801)
