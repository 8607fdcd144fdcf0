"""
Shared fixtures for the melinv test suite
"""

import numpy as np
import pytest

from melinv.corpus import two_tone, write_corpus
from melinv.mel import build_mel_filterbank
from melinv.stft import StftConfig

SMALL_RATE = 8000


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_config():
    """64-sample Hann window, hop 16 (33 bins)"""
    return StftConfig(window_length=64, hop_length=16)


@pytest.fixture
def small_fb(small_config):
    return build_mel_filterbank(8, small_config.n_bins, SMALL_RATE)


@pytest.fixture
def tone():
    return two_tone(440.0, 1250.0, duration=0.2, sample_rate=SMALL_RATE)


@pytest.fixture
def corpus_dir(tmp_path):
    """Three short speech-like clips at 16 kHz"""
    directory = tmp_path / "corpus"
    write_corpus(directory, count=3, seed=0, duration=0.25, sample_rate=16000)
    return directory


def stft_oracle(samples, config):
    """STFT written frame by frame with numpy.fft, independent of StftOperator"""
    pad = config.window_length - config.hop_length
    n_frames = config.frame_count(samples.size)
    buffer = np.zeros((n_frames - 1) * config.hop_length + config.window_length)
    buffer[pad:pad + samples.size] = samples
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(config.window_length) / config.window_length)
    columns = []
    for t in range(n_frames):
        frame = buffer[t * config.hop_length:t * config.hop_length + config.window_length]
        columns.append(np.fft.rfft(frame * window, n=config.fft_size))
    return np.stack(columns, axis=1)
