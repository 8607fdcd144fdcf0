"""
melinv synthetic corpus
Deterministic speech-like test clips for experiments without a recorded dataset
"""

import logging
from pathlib import Path

import numpy as np
from scipy.signal import butter, sosfilt

from .audio_io import write_wav
from .errors import InvalidInputError
from .stft import Signal

logger = logging.getLogger(__name__)

PEAK_LEVEL = 0.5
F0_RANGE = (90.0, 250.0)
SYLLABLE_RATE_RANGE = (3.0, 6.0)


def _check_clip_args(duration: float, sample_rate: int) -> int:
    if sample_rate <= 0:
        raise InvalidInputError(f"sample_rate must be positive, got {sample_rate}")
    n_samples = int(round(duration * sample_rate))
    if n_samples < 1:
        raise InvalidInputError(f"duration {duration}s yields no samples at {sample_rate} Hz")
    return n_samples


def _normalize(samples: np.ndarray) -> np.ndarray:
    peak = np.max(np.abs(samples))
    return samples * (PEAK_LEVEL / peak) if peak > 0.0 else samples


def speech_like_clip(seed: int, duration: float = 1.0, sample_rate: int = 16000) -> Signal:
    """
    Voiced/unvoiced mixture with speech-like structure

    A harmonic source with a gliding fundamental and 1/k rolloff is gated by a
    syllabic envelope; band-passed noise fills the gaps between syllables.
    The same seed always gives the same clip.
    """
    n_samples = _check_clip_args(duration, sample_rate)
    rng = np.random.default_rng(seed)
    nyquist = sample_rate / 2.0
    t = np.arange(n_samples) / sample_rate

    f0_start, f0_end = rng.uniform(*F0_RANGE, size=2)
    f0 = f0_start + (f0_end - f0_start) * t / max(duration, 1e-9)
    phase = 2.0 * np.pi * np.cumsum(f0) / sample_rate

    n_harmonics = max(1, int(0.9 * nyquist // max(f0_start, f0_end)))
    offsets = rng.uniform(0.0, 2.0 * np.pi, size=n_harmonics)
    voiced = np.zeros(n_samples)
    for k in range(1, n_harmonics + 1):
        voiced += np.sin(k * phase + offsets[k - 1]) / k

    # band edges stay inside (0, 0.45 * sample_rate) at any sample rate
    low = min(rng.uniform(300.0, 1500.0), 0.2 * sample_rate)
    high = min(low * rng.uniform(2.0, 4.0), 0.45 * sample_rate)
    sos = butter(4, [low, high], btype="bandpass", fs=sample_rate, output="sos")
    unvoiced = sosfilt(sos, rng.standard_normal(n_samples))
    unvoiced /= max(np.max(np.abs(unvoiced)), 1e-12)
    voiced /= max(np.max(np.abs(voiced)), 1e-12)

    rate = rng.uniform(*SYLLABLE_RATE_RANGE)
    envelope = 0.5 * (1.0 - np.cos(2.0 * np.pi * rate * t + rng.uniform(0.0, np.pi)))
    samples = envelope * voiced + 0.3 * (1.0 - envelope) * unvoiced

    return Signal(_normalize(samples), sample_rate)


def two_tone(f1: float = 440.0, f2: float = 1250.0, duration: float = 1.0,
             sample_rate: int = 16000, amplitudes: tuple = (1.0, 0.5)) -> Signal:
    """Sum of two sinusoids, peak-normalized"""
    n_samples = _check_clip_args(duration, sample_rate)
    nyquist = sample_rate / 2.0
    if not (0.0 < f1 < nyquist and 0.0 < f2 < nyquist):
        raise InvalidInputError(f"Tone frequencies must lie in (0, {nyquist}), got {f1} and {f2}")
    t = np.arange(n_samples) / sample_rate
    samples = amplitudes[0] * np.sin(2.0 * np.pi * f1 * t) + amplitudes[1] * np.sin(2.0 * np.pi * f2 * t)
    return Signal(_normalize(samples), sample_rate)


def write_corpus(out_dir, count: int = 10, seed: int = 0, duration: float = 1.0,
                 sample_rate: int = 16000) -> list:
    """
    Write clip_000.wav, clip_001.wav, ... into out_dir

    Clip i uses seed + i.

    Returns:
        Paths of the written files, in order
    """
    if count < 1:
        raise InvalidInputError(f"count must be >= 1, got {count}")
    out_dir = Path(out_dir)
    paths = []
    for i in range(count):
        path = out_dir / f"clip_{i:03d}.wav"
        write_wav(path, speech_like_clip(seed + i, duration, sample_rate))
        paths.append(path)
    logger.info(f"Wrote {count} synthetic clips to {out_dir}")
    return paths
