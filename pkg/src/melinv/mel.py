"""
melinv mel filterbank
Filterbank construction, mel-spectrogram computation and cascaded
full-band magnitude recovery
"""

import logging
from dataclasses import dataclass, field
from threading import Lock
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import InvalidInputError

logger = logging.getLogger(__name__)

DEFAULT_LSQ_ITERS = 1000
DEFAULT_LSQ_TOL = 1e-8
# Projected-gradient norm is only evaluated every few iterations
CONVERGENCE_CHECK_EVERY = 10


@dataclass(frozen=True)
class MagnitudeGram:
    """Real F x T matrix; nonneg marks magnitudes as opposed to duals/intermediates"""

    data: np.ndarray
    nonneg: bool = True

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise InvalidInputError(f"MagnitudeGram must be 2-D, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise InvalidInputError("MagnitudeGram contains NaN or Inf")
        if self.nonneg and np.any(data < 0.0):
            raise InvalidInputError("MagnitudeGram flagged nonnegative has negative entries")
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple:
        return self.data.shape


@dataclass(frozen=True)
class MelGram:
    """Nonnegative B x T mel-spectrogram"""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise InvalidInputError(f"MelGram must be 2-D, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise InvalidInputError("MelGram contains NaN or Inf")
        if np.any(data < 0.0):
            raise InvalidInputError("MelGram has negative entries")
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]


class MelFilterbank:
    """
    Nonnegative B x F filterbank E

    Also owns the Gram matrix EᵀE, its spectral-norm rescaling and a cache of
    Cholesky factors of the B x B system (ρI + λEEᵀ), one per (λ, ρ) pair.
    All are read-only once computed and safe to share between threads.
    """

    def __init__(self, weights: np.ndarray, sample_rate: int,
                 f_min: float = 0.0, f_max: Optional[float] = None):
        weights = np.array(weights, dtype=np.float64)
        if weights.ndim != 2:
            raise InvalidInputError(f"Filterbank must be 2-D, got shape {weights.shape}")
        if not np.all(np.isfinite(weights)):
            raise InvalidInputError("Filterbank contains NaN or Inf")
        if np.any(weights < 0.0):
            raise InvalidInputError("Filterbank has negative entries")
        if weights.shape[0] > weights.shape[1]:
            raise InvalidInputError(f"Filterbank needs B <= F, got shape {weights.shape}")
        weights.flags.writeable = False

        self.E = weights
        self.sample_rate = int(sample_rate)
        self.f_min = float(f_min)
        self.f_max = float(f_max) if f_max is not None else self.sample_rate / 2.0
        self._gram: Optional[np.ndarray] = None
        self._lipschitz: Optional[float] = None
        self._normalized: Optional["MelFilterbank"] = None
        self._factors: dict = {}
        self._lock = Lock()

    def __repr__(self) -> str:
        return (f"MelFilterbank(B={self.n_mels}, F={self.n_bins}, sample_rate={self.sample_rate}, "
                f"f_min={self.f_min}, f_max={self.f_max})")

    @property
    def n_mels(self) -> int:
        return self.E.shape[0]

    @property
    def n_bins(self) -> int:
        return self.E.shape[1]

    def gram(self) -> np.ndarray:
        """EᵀE"""
        with self._lock:
            if self._gram is None:
                gram = self.E.T @ self.E
                gram.flags.writeable = False
                self._gram = gram
            return self._gram

    def lipschitz(self) -> float:
        """‖EᵀE‖₂, the Lipschitz constant of the mel-fit gradient"""
        gram = self.gram()
        with self._lock:
            if self._lipschitz is None:
                self._lipschitz = float(np.linalg.eigvalsh(gram)[-1])
            return self._lipschitz

    def spectral_norm(self) -> float:
        """‖E‖₂"""
        return float(np.sqrt(self.lipschitz()))

    def normalized(self) -> "MelFilterbank":
        """E / ‖E‖₂, so that ‖EᵀE‖₂ = 1; an all-zero filterbank is returned as is"""
        scale = self.spectral_norm()
        if scale <= 0.0:
            return self
        with self._lock:
            if self._normalized is None:
                self._normalized = MelFilterbank(self.E / scale, self.sample_rate, self.f_min, self.f_max)
            return self._normalized

    def factor(self, lam: float, rho: float) -> tuple:
        """
        Cholesky factor of (ρI + λEEᵀ), computed once per (λ, ρ)

        (λEᵀE + ρI)⁻¹ = (I − λEᵀ(ρI + λEEᵀ)⁻¹E) / ρ, so solving the F x F mel
        system only needs this B x B factor.
        """
        if rho <= 0.0 or lam < 0.0:
            raise InvalidInputError(f"Need rho > 0 and lambda >= 0, got rho={rho} lambda={lam}")
        key = (float(lam), float(rho))
        with self._lock:
            factor = self._factors.get(key)
            if factor is None:
                system = lam * (self.E @ self.E.T) + rho * np.eye(self.n_mels)
                factor = scipy.linalg.cho_factor(system, lower=True, check_finite=False)
                self._factors[key] = factor
                logger.debug(f"Factorized mel system for lambda={lam}, rho={rho}")
            return factor

    def solve(self, lam: float, rho: float, rhs: np.ndarray) -> np.ndarray:
        """(λEᵀE + ρI)⁻¹ rhs through the cached B x B factor"""
        factor = self.factor(lam, rho)
        inner = scipy.linalg.cho_solve(factor, self.E @ rhs, check_finite=False)
        return (rhs - lam * (self.E.T @ inner)) / rho

    def has_factor(self, lam: float, rho: float) -> bool:
        with self._lock:
            return (float(lam), float(rho)) in self._factors


def hz_to_mel(frequencies):
    """HTK mel scale"""
    return 2595.0 * np.log10(1.0 + np.asarray(frequencies, dtype=np.float64) / 700.0)


def mel_to_hz(mels):
    return 700.0 * (10.0 ** (np.asarray(mels, dtype=np.float64) / 2595.0) - 1.0)


def build_mel_filterbank(n_mels: int, n_bins: int, sample_rate: int,
                         f_min: float = 0.0, f_max: Optional[float] = None) -> MelFilterbank:
    """
    Triangular filters on the HTK mel scale with area (Slaney-style) normalization

    Args:
        n_mels: Number of mel bins B
        n_bins: Number of one-sided frequency bins F (fft_size/2 + 1)
        sample_rate: Sampling rate in Hz
        f_min: Lowest band edge in Hz
        f_max: Highest band edge in Hz (default Nyquist)

    Raises:
        InvalidInputError: Band edges outside [0, Nyquist] or B > F
    """
    nyquist = sample_rate / 2.0
    if f_max is None:
        f_max = nyquist
    if not 0.0 <= f_min < f_max <= nyquist:
        raise InvalidInputError(f"Need 0 <= f_min < f_max <= {nyquist}, got f_min={f_min} f_max={f_max}")
    if not 1 <= n_mels <= n_bins:
        raise InvalidInputError(f"Need 1 <= B <= F, got B={n_mels} F={n_bins}")

    fft_freqs = np.linspace(0.0, nyquist, n_bins)
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    # the mel round trip can land an ulp outside the requested band
    edges[0], edges[-1] = f_min, f_max
    widths = np.diff(edges)
    ramps = np.subtract.outer(edges, fft_freqs)

    weights = np.zeros((n_mels, n_bins))
    for b in range(n_mels):
        lower = -ramps[b] / widths[b]
        upper = ramps[b + 2] / widths[b + 1]
        weights[b] = np.maximum(0.0, np.minimum(lower, upper))

    weights *= (2.0 / (edges[2:] - edges[:-2]))[:, np.newaxis]

    empty = np.flatnonzero(weights.max(axis=1) <= 0.0)
    if empty.size:
        logger.warning(f"{empty.size} mel filters are empty; consider fewer mel bins or a longer FFT")

    return MelFilterbank(weights, sample_rate, f_min, f_max)


def _check_magnitude(A: MagnitudeGram, fb: MelFilterbank) -> np.ndarray:
    if A.shape[0] != fb.n_bins:
        raise InvalidInputError(f"Magnitude has {A.shape[0]} bins, filterbank expects {fb.n_bins}")
    return A.data


def mel_compress(A: MagnitudeGram, fb: MelFilterbank) -> MelGram:
    """M = E A"""
    data = _check_magnitude(A, fb)
    if not A.nonneg and np.any(data < 0.0):
        raise InvalidInputError("Mel compression needs a nonnegative magnitude")
    return MelGram(fb.E @ data)


@dataclass
class LsqResult:
    """Outcome of the bound-constrained mel-to-full-band solve"""
    magnitude: MagnitudeGram
    converged: bool
    iterations: int
    objective: float
    history: list = field(default_factory=list, repr=False)


def _column_objective(E: np.ndarray, Y: np.ndarray, M: np.ndarray) -> np.ndarray:
    residual = E @ Y - M
    return 0.5 * np.einsum("ij,ij->j", residual, residual)


def _projected_gradient_norm(gram: np.ndarray, EtM: np.ndarray, Y: np.ndarray) -> float:
    grad = gram @ Y - EtM
    return float(np.linalg.norm(Y - np.maximum(Y - grad, 0.0), axis=0).max(initial=0.0))


def invert_mel_lsq(M: MelGram, fb: MelFilterbank, iters: int = DEFAULT_LSQ_ITERS,
                   tol: float = DEFAULT_LSQ_TOL, init: Optional[np.ndarray] = None) -> LsqResult:
    """
    Minimize ½‖EY − M‖² over Y >= 0, frame by frame

    Accelerated projected gradient with step 1/‖EᵀE‖₂. A column whose
    accelerated step would raise its objective restarts from a plain projected
    gradient step, so every column's objective is non-increasing.

    Args:
        M: Mel-spectrogram, B x T
        fb: Filterbank E
        iters: Iteration cap
        tol: Stop once every column's projected-gradient norm is at most tol
        init: Optional nonnegative warm start, F x T

    Returns:
        LsqResult with the best iterate and a convergence flag
    """
    if M.shape[0] != fb.n_mels:
        raise InvalidInputError(f"Mel-spectrogram has {M.shape[0]} bins, filterbank has {fb.n_mels}")

    E = fb.E
    mel = M.data
    gram = fb.gram()
    EtM = E.T @ mel
    n_frames = mel.shape[1]

    Y = np.zeros((fb.n_bins, n_frames)) if init is None else np.maximum(np.asarray(init, dtype=np.float64), 0.0)
    obj = _column_objective(E, Y, mel)
    history = [float(obj.sum())]

    L = fb.lipschitz()
    if L <= 0.0 or n_frames == 0:
        return LsqResult(MagnitudeGram(Y), True, 0, history[0], history)
    step = 1.0 / L

    Z = Y.copy()
    t = np.ones(n_frames)
    converged = _projected_gradient_norm(gram, EtM, Y) <= tol
    iteration = 0

    while not converged and iteration < iters:
        iteration += 1
        Y_new = np.maximum(Z - step * (gram @ Z - EtM), 0.0)
        obj_new = _column_objective(E, Y_new, mel)

        restart = obj_new > obj
        if np.any(restart):
            Yr = Y[:, restart]
            fallback = np.maximum(Yr - step * (gram @ Yr - EtM[:, restart]), 0.0)
            fallback_obj = _column_objective(E, fallback, mel[:, restart])
            # keep the previous iterate if rounding still breaks monotonicity
            worse = fallback_obj > obj[restart]
            fallback[:, worse] = Yr[:, worse]
            fallback_obj[worse] = obj[restart][worse]
            Y_new[:, restart] = fallback
            obj_new[restart] = fallback_obj
            t[restart] = 1.0

        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        Z = Y_new + ((t - 1.0) / t_new) * (Y_new - Y)
        Y, obj, t = Y_new, obj_new, t_new
        history.append(float(obj.sum()))

        if iteration % CONVERGENCE_CHECK_EVERY == 0 or iteration == iters:
            converged = _projected_gradient_norm(gram, EtM, Y) <= tol

    if not converged:
        logger.info(f"Mel-to-full-band solve stopped at the {iters}-iteration cap "
                    f"(objective {history[-1]:.3e})")

    return LsqResult(MagnitudeGram(Y), bool(converged), iteration, history[-1], history)
