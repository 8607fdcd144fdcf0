"""
melinv Settings
Configuration management for environment variables, presets and defaults
"""

import os
from typing import Optional
from dataclasses import dataclass, field

from dotenv import load_dotenv

# Load from .env.local first, then fallback to .env
load_dotenv('.env.local')
load_dotenv()


@dataclass(frozen=True)
class Preset:
    """Analysis geometry shared by a family of experiments"""
    sample_rate: int
    window_length: int
    hop_length: int
    n_mels: int = 80
    f_min: float = 0.0
    f_max: Optional[float] = None  # None means Nyquist


PRESETS = {
    # 64 ms Hann with 16 ms shift at 16 kHz, 80 mel bins
    "speech": Preset(sample_rate=16000, window_length=1024, hop_length=256),
    # 1024-sample Hann with 256-sample shift at 22.05 kHz
    "foley": Preset(sample_rate=22050, window_length=1024, hop_length=256),
}

DEFAULT_PRESET = "speech"


def _env_int(name: str) -> Optional[int]:
    value = os.getenv(name)
    return int(value) if value not in (None, "") else None


@dataclass
class Settings:
    """Application settings loaded from environment variables"""

    # Worker pool width; overrides --jobs when set
    THREADS: Optional[int] = field(default_factory=lambda: _env_int("MELINV_THREADS"))

    # Internal FFT parallelism per transform call
    FFT_WORKERS: int = field(default_factory=lambda: int(os.getenv("MELINV_FFT_WORKERS", "1")))

    # Logging
    LOG_LEVEL: str = field(default_factory=lambda: os.getenv("MELINV_LOG_LEVEL", "INFO").upper())
    COLOR_LOGS: bool = field(default_factory=lambda: os.getenv("MELINV_COLOR_LOGS", "true").lower() == "true")

    # Artifacts
    OUT_DIR: str = field(default_factory=lambda: os.getenv("MELINV_OUT_DIR", "out"))

    def __post_init__(self):
        """Validate settings after initialization"""
        if self.THREADS is not None and self.THREADS < 1:
            raise ValueError("MELINV_THREADS must be a positive integer")

        if self.FFT_WORKERS < 1:
            raise ValueError("MELINV_FFT_WORKERS must be a positive integer")

        if self.LOG_LEVEL not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ValueError(f"MELINV_LOG_LEVEL must be a logging level name, got {self.LOG_LEVEL}")

    def worker_count(self, requested: int) -> int:
        """Pool width: environment override first, then the requested width"""
        if self.THREADS is not None:
            return self.THREADS
        return max(1, requested)

    def validate_environment(self) -> list[str]:
        """Validate the runtime environment and return any problems found"""
        errors = []

        if os.path.exists(self.OUT_DIR) and not os.path.isdir(self.OUT_DIR):
            errors.append(f"MELINV_OUT_DIR {self.OUT_DIR} exists and is not a directory")
        elif os.path.isdir(self.OUT_DIR) and not os.access(self.OUT_DIR, os.W_OK):
            errors.append(f"MELINV_OUT_DIR {self.OUT_DIR} is not writable")

        cpu_count = os.cpu_count() or 1
        if self.THREADS is not None and self.THREADS > cpu_count:
            errors.append(f"MELINV_THREADS={self.THREADS} exceeds available CPUs ({cpu_count})")

        return errors


def get_preset(name: str) -> Preset:
    """Look up a named preset"""
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"Unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
