"""
melinv STFT
Analysis/synthesis pair with the canonical dual window and the
consistency projection onto the image of the STFT
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from threading import Lock
from typing import Optional

import numpy as np
import scipy.fft
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

from .errors import InvalidInputError

logger = logging.getLogger(__name__)

WINDOW_KINDS = ("hann",)
PAD_MODES = ("zero",)


@dataclass(frozen=True)
class StftConfig:
    """Window/hop/FFT geometry of the analysis-synthesis pair"""

    window_length: int = 1024
    hop_length: int = 256
    fft_size: Optional[int] = None  # defaults to window_length
    window_kind: str = "hann"
    pad_mode: str = "zero"

    def __post_init__(self):
        if self.fft_size is None:
            object.__setattr__(self, "fft_size", self.window_length)

        if not 0 < self.hop_length <= self.window_length <= self.fft_size:
            raise InvalidInputError(
                "STFT geometry must satisfy 0 < hop <= window <= fft_size, got "
                f"hop={self.hop_length} window={self.window_length} fft={self.fft_size}"
            )
        if self.window_length < 2 * self.hop_length:
            raise InvalidInputError(
                f"window_length/hop_length must be >= 2, got {self.window_length}/{self.hop_length}"
            )
        if self.window_kind not in WINDOW_KINDS:
            raise InvalidInputError(f"Unsupported window {self.window_kind!r}")
        if self.pad_mode not in PAD_MODES:
            raise InvalidInputError(f"Unsupported pad mode {self.pad_mode!r}")

        # Σ_k w[n+kH]² > 0 for every n, otherwise no dual window exists
        squared = self.window() ** 2
        overlap = np.zeros(self.hop_length)
        for start in range(0, self.window_length, self.hop_length):
            chunk = squared[start:start + self.hop_length]
            overlap[:chunk.size] += chunk
        if overlap.min() <= 0.0:
            raise InvalidInputError(
                f"Window overlap sum vanishes at hop {self.hop_length}; no canonical dual window"
            )

    @classmethod
    def from_ms(cls, window_ms: float, hop_ms: float, sample_rate: int) -> "StftConfig":
        """Build a config from durations in milliseconds"""
        window_length = int(round(window_ms * sample_rate / 1000.0))
        hop_length = int(round(hop_ms * sample_rate / 1000.0))
        return cls(window_length=window_length, hop_length=hop_length)

    def window(self) -> np.ndarray:
        """Periodic analysis window"""
        return get_window(self.window_kind, self.window_length, fftbins=True).astype(np.float64)

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def pad(self) -> int:
        """Zeros prepended to the signal"""
        return self.window_length - self.hop_length

    def frame_count(self, n_samples: int) -> int:
        """Number of frames produced for a signal of n_samples"""
        span = n_samples + self.window_length - 2 * self.hop_length
        return math.ceil(span / self.hop_length) + 1

    def buffer_length(self, n_frames: int) -> int:
        """Length of the padded buffer spanned by n_frames"""
        return (n_frames - 1) * self.hop_length + self.window_length

    def signal_length(self, n_frames: int) -> int:
        """Signal length implied by a frame count when the original is unknown"""
        return self.buffer_length(n_frames) - 2 * self.pad

    def bin_weights(self) -> np.ndarray:
        """Multiplicity of each one-sided bin in the two-sided spectrum"""
        weights = np.full(self.n_bins, 2.0)
        weights[0] = 1.0
        if self.fft_size % 2 == 0:
            weights[-1] = 1.0
        return weights


@dataclass(frozen=True)
class Signal:
    """Real time-domain signal"""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise InvalidInputError(f"Signal must be one-dimensional, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise InvalidInputError("Signal contains NaN or Inf")
        if int(self.sample_rate) <= 0:
            raise InvalidInputError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.size


@dataclass(frozen=True)
class Spectrogram:
    """One-sided complex STFT coefficients, F x T"""

    data: np.ndarray
    config: StftConfig
    length: Optional[int] = None  # original signal length, when known
    sample_rate: Optional[int] = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.complex128)
        if data.ndim != 2:
            raise InvalidInputError(f"Spectrogram must be 2-D, got shape {data.shape}")
        if data.shape[0] != self.config.n_bins:
            raise InvalidInputError(
                f"Spectrogram has {data.shape[0]} bins, config expects {self.config.n_bins}"
            )
        if not np.all(np.isfinite(data)):
            raise InvalidInputError("Spectrogram contains NaN or Inf")
        if self.length is not None and self.config.frame_count(self.length) != data.shape[1]:
            raise InvalidInputError(
                f"Length {self.length} implies {self.config.frame_count(self.length)} frames, "
                f"spectrogram has {data.shape[1]}"
            )
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]

    def magnitude(self) -> np.ndarray:
        return np.abs(self.data)

    def inner(self, other: "Spectrogram") -> complex:
        """Inner product of the two-sided spectra the one-sided data stand for"""
        weights = self.config.bin_weights()[:, None]
        return complex(np.sum(weights * self.data * np.conj(other.data)))

    def norm(self) -> float:
        return math.sqrt(max(self.inner(self).real, 0.0))

    def with_data(self, data: np.ndarray) -> "Spectrogram":
        return Spectrogram(data, self.config, self.length, self.sample_rate)


class StftOperator:
    """
    Array-level STFT engine for one configuration

    Frame t covers samples [t*hop, t*hop + window) of the zero-padded buffer.
    Synthesis divides the windowed overlap-add by the squared-window envelope
    of the buffer, which makes it the least-squares left inverse of analysis.
    """

    def __init__(self, config: StftConfig, workers: int = 1):
        self.config = config
        self.workers = workers
        self.window = config.window()
        self._envelopes: dict[int, np.ndarray] = {}
        self._lock = Lock()

    def pad(self, samples: np.ndarray) -> np.ndarray:
        """Embed a signal into its zero-padded analysis buffer"""
        n_frames = self.config.frame_count(samples.size)
        buffer = np.zeros(self.config.buffer_length(n_frames))
        buffer[self.config.pad:self.config.pad + samples.size] = samples
        return buffer

    def analyze(self, buffer: np.ndarray) -> np.ndarray:
        """STFT of an already padded buffer, shape (F, T)"""
        cfg = self.config
        frames = sliding_window_view(buffer, cfg.window_length)[::cfg.hop_length]
        spectra = scipy.fft.rfft(frames * self.window, n=cfg.fft_size, axis=-1, workers=self.workers)
        return np.ascontiguousarray(spectra.T)

    def _overlap_add(self, frames: np.ndarray) -> np.ndarray:
        cfg = self.config
        n_frames, width = frames.shape
        hop = cfg.hop_length
        chunks = math.ceil(width / hop)
        blocks = np.zeros((n_frames - 1 + chunks, hop))
        for r in range(chunks):
            segment = frames[:, r * hop:(r + 1) * hop]
            blocks[r:r + n_frames, :segment.shape[1]] += segment
        return blocks.reshape(-1)[:cfg.buffer_length(n_frames)]

    def envelope(self, n_frames: int) -> np.ndarray:
        """Σ_t w²[n - t*hop] over the buffer spanned by n_frames"""
        with self._lock:
            env = self._envelopes.get(n_frames)
            if env is None:
                squared = np.broadcast_to(self.window ** 2, (n_frames, self.config.window_length))
                env = self._overlap_add(squared)
                env.flags.writeable = False
                self._envelopes[n_frames] = env
            return env

    def synthesize(self, data: np.ndarray) -> np.ndarray:
        """Canonical-dual overlap-add of (F, T) coefficients into the padded buffer"""
        cfg = self.config
        frames = scipy.fft.irfft(data.T, n=cfg.fft_size, axis=-1, workers=self.workers)
        frames = frames[:, :cfg.window_length] * self.window
        summed = self._overlap_add(frames)
        env = self.envelope(data.shape[1])
        return np.divide(summed, env, out=np.zeros_like(summed), where=env > 0.0)

    def project(self, data: np.ndarray, length: Optional[int] = None) -> np.ndarray:
        """P_C(X) = STFT(iSTFT(X)) for signals of the given length"""
        cfg = self.config
        if length is None:
            length = cfg.signal_length(data.shape[1])
        buffer = self.synthesize(data)
        buffer[:cfg.pad] = 0.0
        buffer[cfg.pad + length:] = 0.0
        return self.analyze(buffer)


@lru_cache(maxsize=32)
def _cached_operator(config: StftConfig, workers: int) -> StftOperator:
    logger.debug(f"Creating STFT operator for {config} with {workers} FFT workers")
    return StftOperator(config, workers)


def get_operator(config: StftConfig, workers: Optional[int] = None) -> StftOperator:
    """Shared operator for a configuration (read-only after construction)"""
    if workers is None:
        from .settings import Settings
        workers = Settings().FFT_WORKERS
    return _cached_operator(config, workers)


def stft(signal: Signal, config: StftConfig) -> Spectrogram:
    """
    One-sided STFT of a signal

    Args:
        signal: Time-domain signal
        config: Analysis geometry

    Returns:
        Spectrogram carrying the original signal length and sample rate

    Raises:
        InvalidInputError: Empty signal
    """
    if len(signal) == 0:
        raise InvalidInputError("Cannot analyze an empty signal")
    op = get_operator(config)
    return Spectrogram(op.analyze(op.pad(signal.samples)), config, len(signal), signal.sample_rate)


def _resolve_length(spec: Spectrogram) -> int:
    length = spec.length
    if length is None:
        length = spec.config.signal_length(spec.n_frames)
        if length < 1:
            raise InvalidInputError(f"{spec.n_frames} frames are too few to span a signal")
    return length


def istft(spec: Spectrogram, config: Optional[StftConfig] = None,
          sample_rate: Optional[int] = None) -> Signal:
    """
    Overlap-add synthesis with the canonical dual window

    The padding is trimmed to the original length when the spectrogram carries
    it; otherwise the frame-implied length is returned. sample_rate defaults to
    the rate the spectrogram was analyzed at.

    Raises:
        InvalidInputError: Spectrogram does not match the configuration, or no
            sample rate is known
    """
    if config is not None and config != spec.config:
        raise InvalidInputError(f"Spectrogram was built with {spec.config}, not {config}")
    if sample_rate is None:
        sample_rate = spec.sample_rate
    if sample_rate is None:
        raise InvalidInputError("istft needs a sample rate; the spectrogram does not carry one")
    cfg = spec.config
    length = _resolve_length(spec)
    buffer = get_operator(cfg).synthesize(spec.data)
    return Signal(buffer[cfg.pad:cfg.pad + length].copy(), sample_rate)


def project_consistency(spec: Spectrogram) -> Spectrogram:
    """Orthogonal projection onto the image of the STFT"""
    length = _resolve_length(spec)
    return spec.with_data(get_operator(spec.config).project(spec.data, length))
