"""
melinv metrics
Spectral convergence on the mel-spectrogram (SCM) and on the full-band
magnitude (SC), the joint objective, and paired method comparison
"""

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .errors import InvalidInputError
from .mel import MagnitudeGram, MelFilterbank, MelGram
from .stft import Signal, StftConfig, get_operator

FLOOR_DB = -300.0


@dataclass
class MetricReport:
    """Final scores of one reconstructed clip"""
    clip_id: str
    scm_db: float
    sc_db: Optional[float]
    objective: Optional[float] = None


@dataclass
class ComparisonReport:
    """Paired-samples t-test of two methods over the same clips"""
    n: int
    mean_a: float
    mean_b: float
    mean_diff: float
    t_statistic: float
    p_value: float


def _as_array(value) -> np.ndarray:
    return value.data if hasattr(value, "data") else np.asarray(value)


def spectral_convergence_db(estimate: np.ndarray, target: np.ndarray) -> float:
    """20·log10(‖estimate − target‖ / ‖target‖), clamped at FLOOR_DB"""
    denominator = np.linalg.norm(target)
    if denominator == 0.0:
        raise InvalidInputError("Spectral convergence is undefined for an all-zero target")
    numerator = np.linalg.norm(estimate - target)
    if numerator == 0.0:
        return FLOOR_DB
    return max(20.0 * math.log10(numerator / denominator), FLOOR_DB)


def fit_length(samples: np.ndarray, length: Optional[int]) -> np.ndarray:
    """Trim or zero-pad samples to length"""
    if length is None or samples.size == length:
        return samples
    if samples.size > length:
        return samples[:length]
    return np.concatenate([samples, np.zeros(length - samples.size)])


def reanalyzed_magnitude(xhat: Signal, cfg: StftConfig, length: Optional[int] = None) -> np.ndarray:
    """|STFT(x̂)| after trimming x̂ to the clip length"""
    samples = fit_length(xhat.samples, length)
    if samples.size == 0:
        raise InvalidInputError("Cannot score an empty signal")
    op = get_operator(cfg)
    return np.abs(op.analyze(op.pad(samples)))


def scm(xhat: Signal, M: MelGram, fb: MelFilterbank, cfg: StftConfig,
        length: Optional[int] = None) -> float:
    """
    Spectral convergence on the mel-spectrogram, in dB

    Raises:
        InvalidInputError: ‖M‖ = 0, or frame counts disagree
    """
    if not np.any(M.data):
        raise InvalidInputError("SCM is undefined for an all-zero mel-spectrogram")
    magnitude = reanalyzed_magnitude(xhat, cfg, length)
    if magnitude.shape[1] != M.n_frames:
        raise InvalidInputError(
            f"Reconstruction spans {magnitude.shape[1]} frames, mel-spectrogram has {M.n_frames}"
        )
    return spectral_convergence_db(fb.E @ magnitude, M.data)


def sc(xhat: Signal, A: MagnitudeGram, cfg: StftConfig, length: Optional[int] = None) -> float:
    """
    Spectral convergence on the full-band magnitude, in dB

    Raises:
        InvalidInputError: ‖A‖ = 0, or shapes disagree
    """
    if not np.any(A.data):
        raise InvalidInputError("SC is undefined for an all-zero magnitude")
    magnitude = reanalyzed_magnitude(xhat, cfg, length)
    if magnitude.shape != A.shape:
        raise InvalidInputError(f"Reconstruction magnitude is {magnitude.shape}, reference is {A.shape}")
    return spectral_convergence_db(magnitude, A.data)


def score_reconstruction(clip_id: str, xhat: Signal, M: MelGram, fb: MelFilterbank, cfg: StftConfig,
                         reference: Optional[MagnitudeGram] = None, objective: Optional[float] = None,
                         length: Optional[int] = None) -> MetricReport:
    """SCM of x̂, plus SC when the full-band reference is known"""
    scm_db = scm(xhat, M, fb, cfg, length)
    sc_db = sc(xhat, reference, cfg, length) if reference is not None else None
    return MetricReport(clip_id, scm_db, sc_db, objective)


def joint_objective(X, Y, M, fb: MelFilterbank, lam: float) -> float:
    """½‖|X| − Y‖² + λ·½‖EY − M‖²"""
    X, Y, M = _as_array(X), _as_array(Y), _as_array(M)
    if X.shape != Y.shape or M.shape != (fb.n_mels, Y.shape[1]):
        raise InvalidInputError(f"Shape mismatch: X {X.shape}, Y {Y.shape}, M {M.shape}")
    magnitude_fit = 0.5 * float(np.sum((np.abs(X) - Y) ** 2))
    mel_fit = 0.5 * float(np.sum((fb.E @ Y - M) ** 2))
    return magnitude_fit + lam * mel_fit


def paired_comparison(scores_a: Sequence[float], scores_b: Sequence[float]) -> ComparisonReport:
    """Paired-samples t-test of per-clip scores of two methods"""
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise InvalidInputError(f"Paired scores must be equal-length vectors, got {a.shape} and {b.shape}")
    if a.size < 2:
        raise InvalidInputError("A paired t-test needs at least two clips")

    result = stats.ttest_rel(a, b)
    return ComparisonReport(
        n=int(a.size),
        mean_a=float(a.mean()),
        mean_b=float(b.mean()),
        mean_diff=float((a - b).mean()),
        t_statistic=float(result.statistic),
        p_value=float(result.pvalue),
    )
