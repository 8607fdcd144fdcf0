"""
melinv reconstruction algorithms
PG-GLA, ADMM-GLA, iPALM-Joint and ADMM-Joint, the cascaded baselines,
state initialization and per-iteration traces
"""

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import pandas as pd

from .errors import InvalidInputError
from .mel import (DEFAULT_LSQ_ITERS, DEFAULT_LSQ_TOL, MagnitudeGram, MelFilterbank,
                  MelGram, invert_mel_lsq)
from .metrics import joint_objective, spectral_convergence_db
from .prox import ProxContext, prox_magnitude_fit, project_nonneg, unit_phase, update_Y_joint
from .stft import Spectrogram, StftConfig, get_operator

logger = logging.getLogger(__name__)

ALGORITHMS = ("pg-gla", "admm-gla", "ipalm-joint", "admm-joint", "cascade-pg", "cascade-admm")
INIT_MODES = ("zero_phase", "random_phase")

# Per-algorithm hyperparameters applied on top of the AlgoConfig defaults
ALGORITHM_DEFAULTS = {
    "pg-gla": {"mu": 1.0},
    "admm-gla": {"rho": 0.1},
    "ipalm-joint": {"lam": 10.0, "alpha": 0.99},
    "admm-joint": {"lam": 5000.0, "rho": 0.1},
    "cascade-pg": {"mu": 1.0},
    "cascade-admm": {"rho": 0.1},
}


@dataclass(frozen=True)
class AlgoConfig:
    """Iteration count and hyperparameters of one run"""

    iters: int = 500
    rho: float = 0.1
    lam: float = 5000.0
    alpha: float = 0.99
    mu: float = 1.0
    seed: int = 0
    trace_every: int = 10

    def __post_init__(self):
        if self.iters < 0:
            raise InvalidInputError(f"iters must be >= 0, got {self.iters}")
        if self.trace_every < 1:
            raise InvalidInputError(f"trace_every must be >= 1, got {self.trace_every}")
        if self.rho <= 0.0:
            raise InvalidInputError(f"rho must be positive, got {self.rho}")
        if self.lam < 0.0:
            raise InvalidInputError(f"lambda must be nonnegative, got {self.lam}")
        if self.alpha < 0.0:
            raise InvalidInputError(f"alpha must be nonnegative, got {self.alpha}")
        if self.mu <= 0.0:
            raise InvalidInputError(f"mu must be positive, got {self.mu}")

    @classmethod
    def for_algorithm(cls, name: str, **overrides) -> "AlgoConfig":
        """Defaults for an algorithm, with explicit (non-None) overrides applied"""
        if name not in ALGORITHM_DEFAULTS:
            raise InvalidInputError(f"Unknown algorithm {name!r}; choose from {ALGORITHMS}")
        values = dict(ALGORITHM_DEFAULTS[name])
        values.update({key: value for key, value in overrides.items() if value is not None})
        return cls(**values)


@dataclass
class JointState:
    """Iterates of the joint algorithms; V and U are scaled duals"""

    X: np.ndarray
    Z: np.ndarray
    Z_old: np.ndarray
    V: np.ndarray
    Y: np.ndarray
    W: np.ndarray
    U: np.ndarray
    config: StftConfig
    length: Optional[int] = None
    iteration: int = 0

    def __post_init__(self):
        shape = self.Z.shape
        for name in ("X", "Z_old", "V", "Y", "W", "U"):
            if getattr(self, name).shape != shape:
                raise InvalidInputError(f"State field {name} has shape {getattr(self, name).shape}, expected {shape}")
        if shape[0] != self.config.n_bins:
            raise InvalidInputError(f"State has {shape[0]} bins, config expects {self.config.n_bins}")

    def copy(self) -> "JointState":
        return replace(self, **{name: getattr(self, name).copy()
                                for name in ("X", "Z", "Z_old", "V", "Y", "W", "U")})

    def spectrogram(self) -> Spectrogram:
        return Spectrogram(self.Z, self.config, self.length)


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    scm_db: Optional[float]
    sc_db: Optional[float]
    objective: float
    elapsed_ms: float


TRACE_COLUMNS = ["iteration", "scm_db", "sc_db", "objective", "elapsed_ms"]


@dataclass
class RunTrace:
    """Metrics recorded every trace_every iterations, plus the first and last"""

    records: list = field(default_factory=list)
    state: Optional[JointState] = field(default=None, repr=False)

    def final(self) -> TraceRecord:
        return self.records[-1]

    def to_frame(self) -> pd.DataFrame:
        rows = [[r.iteration, r.scm_db, r.sc_db, r.objective, r.elapsed_ms] for r in self.records]
        frame = pd.DataFrame(rows, columns=TRACE_COLUMNS)
        # None (no reference) becomes NaN, written as an empty cell
        return frame.astype({"iteration": int, "scm_db": float, "sc_db": float,
                             "objective": float, "elapsed_ms": float})


@dataclass
class TraceTargets:
    """What the trace measures iterates against"""
    mel: Optional[MelGram] = None
    filterbank: Optional[MelFilterbank] = None
    reference: Optional[MagnitudeGram] = None
    timing: bool = True


class _Recorder:
    """Computes trace rows from the consistent iterate Z"""

    def __init__(self, cfg: AlgoConfig, targets: Optional[TraceTargets], lam: float):
        self.cfg = cfg
        self.targets = targets or TraceTargets()
        self.lam = lam
        self.trace = RunTrace()
        self._start = time.perf_counter()
        self._has_mel = self.targets.mel is not None and self.targets.filterbank is not None
        if self._has_mel and not np.any(self.targets.mel.data):
            self._has_mel = False

    def record(self, iteration: int, Z: np.ndarray, Y: np.ndarray) -> None:
        magnitude = np.abs(Z)
        targets = self.targets
        scm_db = sc_db = None

        if self._has_mel:
            scm_db = spectral_convergence_db(targets.filterbank.E @ magnitude, targets.mel.data)
            objective = joint_objective(Z, Y, targets.mel.data, targets.filterbank, self.lam)
        else:
            objective = 0.5 * float(np.sum((magnitude - Y) ** 2))
        if targets.reference is not None and np.any(targets.reference.data):
            sc_db = spectral_convergence_db(magnitude, targets.reference.data)

        elapsed = (time.perf_counter() - self._start) * 1000.0 if targets.timing else 0.0
        self.trace.records.append(TraceRecord(iteration, scm_db, sc_db, objective, elapsed))
        logger.debug(f"iter {iteration}: scm={scm_db} sc={sc_db} objective={objective:.6e}")

    def step(self, iteration: int, Z: np.ndarray, Y: np.ndarray) -> None:
        if iteration % self.cfg.trace_every == 0 or iteration == self.cfg.iters:
            self.record(iteration, Z, Y)

    def finish(self, name: str, state: Optional[JointState] = None) -> RunTrace:
        self.trace.state = state
        last = self.trace.final()
        logger.info(f"{name} finished {self.cfg.iters} iterations: scm={last.scm_db} sc={last.sc_db}")
        return self.trace


def _gla_phase(X: np.ndarray) -> np.ndarray:
    """X / |X| with zero where X == 0 (zero gradient at empty bins)"""
    magnitude = np.abs(X)
    phase = np.zeros_like(X)
    np.divide(X, magnitude, out=phase, where=magnitude > 0.0)
    return phase


def _length_of(spec: Spectrogram) -> int:
    return spec.length if spec.length is not None else spec.config.signal_length(spec.n_frames)


def _check_magnitude(A: MagnitudeGram, X0: Spectrogram) -> None:
    if A.shape != X0.shape:
        raise InvalidInputError(f"Magnitude {A.shape} does not match spectrogram {X0.shape}")


def pg_gla(A: MagnitudeGram, X0: Spectrogram, cfg: AlgoConfig,
           targets: Optional[TraceTargets] = None) -> tuple:
    """
    Projected gradient on ½‖|X| − A‖² over the image of the STFT

    X ← P_C(X − μ(X − A ⊙ X ⊘ |X|)); μ = 1 is classic Griffin-Lim.

    Returns:
        (final consistent Spectrogram, RunTrace)
    """
    _check_magnitude(A, X0)
    op = get_operator(X0.config)
    length = _length_of(X0)
    target = A.data
    X = X0.data.copy()

    recorder = _Recorder(cfg, targets, cfg.lam)
    recorder.record(0, X, target)
    for k in range(cfg.iters):
        if cfg.mu == 1.0:
            step = target * _gla_phase(X)
        else:
            step = X - cfg.mu * (X - target * _gla_phase(X))
        X = op.project(step, length)
        recorder.step(k + 1, X, target)

    return X0.with_data(X), recorder.finish("pg-gla")


def admm_gla(A: MagnitudeGram, X0: Spectrogram, cfg: AlgoConfig,
             targets: Optional[TraceTargets] = None) -> tuple:
    """
    ADMM on the magnitude fit with the consistency constraint (Y fixed to A)

    Returns:
        (final consistent iterate Z, RunTrace)
    """
    _check_magnitude(A, X0)
    op = get_operator(X0.config)
    length = _length_of(X0)
    target = A.data
    Z = X0.data.copy()
    V = np.zeros_like(Z)
    X = Z

    recorder = _Recorder(cfg, targets, cfg.lam)
    recorder.record(0, Z, target)
    for k in range(cfg.iters):
        X = prox_magnitude_fit(Z + V, target, cfg.rho)
        Z = op.project(X - V, length)
        V = V + Z - X
        recorder.step(k + 1, Z, target)

    state = JointState(X=X, Z=Z, Z_old=Z, V=V, Y=target, W=target, U=np.zeros_like(target),
                       config=X0.config, length=X0.length, iteration=cfg.iters)
    return X0.with_data(Z), recorder.finish("admm-gla", state)


def _check_mel(M: MelGram, fb: MelFilterbank, state: JointState) -> None:
    if M.shape != (fb.n_mels, state.Z.shape[1]):
        raise InvalidInputError(f"Mel-spectrogram {M.shape} does not match filterbank/state "
                                f"({fb.n_mels}, {state.Z.shape[1]})")
    if fb.n_bins != state.Z.shape[0]:
        raise InvalidInputError(f"Filterbank has {fb.n_bins} bins, state has {state.Z.shape[0]}")


def _normalized_problem(M: MelGram, fb: MelFilterbank) -> tuple:
    """
    (M, E) divided by ‖E‖₂

    The joint solvers run on this pair so that λ weighs the mel fit against a
    Gram matrix of unit norm whatever the filterbank's own scaling. Minimizers
    of ‖EY − M‖ and SCM are unchanged.
    """
    scaled = fb.normalized()
    if scaled is fb:
        return M, fb
    return MelGram(M.data / fb.spectral_norm()), scaled


def _joint_targets(targets: Optional[TraceTargets], M: MelGram, fb: MelFilterbank) -> TraceTargets:
    return replace(targets or TraceTargets(), mel=M, filterbank=fb)


def _default_targets(targets: Optional[TraceTargets], M: MelGram, fb: MelFilterbank) -> TraceTargets:
    if targets is None:
        return TraceTargets(mel=M, filterbank=fb)
    if targets.mel is None:
        return replace(targets, mel=M, filterbank=fb)
    return targets


def ipalm_joint(M: MelGram, fb: MelFilterbank, init: JointState, cfg: AlgoConfig,
                targets: Optional[TraceTargets] = None) -> tuple:
    """
    Inertial proximal alternating linearized minimization of the joint problem

    Runs on the spectrally normalized (M, E), so the linearized mel step has
    step size 1/‖EᵀE‖₂. The trace objective is measured on the same pair.

    Returns:
        (final consistent iterate Z, RunTrace with the final JointState)
    """
    _check_mel(M, fb, init)
    M, fb = _normalized_problem(M, fb)
    op = get_operator(init.config)
    length = init.length if init.length is not None else init.config.signal_length(init.Z.shape[1])
    gram = fb.gram()
    EtM = fb.E.T @ M.data
    lam, alpha = cfg.lam, cfg.alpha

    state = init.copy()
    Z, Z_old, Y, X, W = state.Z, state.Z_old, state.Y, state.X, state.W

    recorder = _Recorder(cfg, _joint_targets(targets, M, fb), lam)
    recorder.record(0, Z, Y)
    for k in range(cfg.iters):
        Z_tilde = Z + alpha * (Z - Z_old)
        X = Y * unit_phase(Z_tilde)
        W = Y - gram @ Y + EtM
        Z, Z_old = op.project(X, length), Z
        Y = np.maximum(np.abs(Z) + lam * W, 0.0) / (1.0 + lam)
        recorder.step(k + 1, Z, Y)

    final = replace(state, X=X, Z=Z, Z_old=Z_old, Y=Y, W=W, iteration=init.iteration + cfg.iters)
    return final.spectrogram(), recorder.finish("ipalm-joint", final)


def admm_joint(M: MelGram, fb: MelFilterbank, init: JointState, cfg: AlgoConfig,
               targets: Optional[TraceTargets] = None) -> tuple:
    """
    ADMM for joint estimation of full-band magnitude and phase

    Splits X = Z (consistency) and Y = W (mel fit) with scaled duals V, U.
    Runs on the spectrally normalized (M, E); the mel system is factorized
    once before the loop.

    Returns:
        (final consistent iterate Z, RunTrace with the final JointState)
    """
    _check_mel(M, fb, init)
    M, fb = _normalized_problem(M, fb)
    op = get_operator(init.config)
    length = init.length if init.length is not None else init.config.signal_length(init.Z.shape[1])
    rho = cfg.rho
    ctx = ProxContext(cfg.lam, rho, fb).prepare()
    lam_EtM = cfg.lam * (fb.E.T @ M.data)

    state = init.copy()
    X, Z, V, Y, W, U = state.X, state.Z, state.V, state.Y, state.W, state.U

    recorder = _Recorder(cfg, _joint_targets(targets, M, fb), cfg.lam)
    recorder.record(0, Z, Y)
    for k in range(cfg.iters):
        Psi = Z + V
        X = prox_magnitude_fit(Psi, Y, rho)
        Phi = Y + U
        W = ctx.solve(lam_EtM + rho * Phi) if cfg.lam > 0.0 else Phi.copy()
        Z = op.project(X - V, length)
        Upsilon = W - U
        Y = update_Y_joint(np.abs(X), Upsilon, rho)
        V = V + Z - X
        U = U + Y - W
        recorder.step(k + 1, Z, Y)

    final = replace(state, X=X, Z=Z, Z_old=Z, V=V, Y=Y, W=W, U=U, iteration=init.iteration + cfg.iters)
    return final.spectrogram(), recorder.finish("admm-joint", final)


def _initial_phase(shape: tuple, mode: str, seed: int) -> np.ndarray:
    if mode == "zero_phase":
        return np.ones(shape, dtype=np.complex128)
    if mode == "random_phase":
        rng = np.random.default_rng(seed)
        # negated draw from [-π, π) lands in (-π, π]
        theta = -rng.uniform(-np.pi, np.pi, size=shape)
        return np.exp(1j * theta)
    raise InvalidInputError(f"Unknown init mode {mode!r}; choose from {INIT_MODES}")


def init_from_magnitude(Y0: np.ndarray, config: StftConfig, cfg: AlgoConfig,
                        mode: str = "random_phase", length: Optional[int] = None) -> JointState:
    """Joint state seeded with a magnitude and a zero or random phase"""
    Y0 = np.asarray(Y0, dtype=np.float64)
    n_frames = Y0.shape[1]
    if length is None:
        length = config.signal_length(n_frames)
    elif config.frame_count(length) != n_frames:
        raise InvalidInputError(f"Length {length} does not span {n_frames} frames")

    Z0 = get_operator(config).project(Y0 * _initial_phase(Y0.shape, mode, cfg.seed), length)
    zeros = np.zeros_like(Y0)
    return JointState(X=Z0.copy(), Z=Z0, Z_old=Z0.copy(), V=np.zeros_like(Z0),
                      Y=Y0.copy(), W=Y0.copy(), U=zeros, config=config, length=length)


def init_state(M: MelGram, fb: MelFilterbank, cfg: AlgoConfig, mode: str = "random_phase",
               config: Optional[StftConfig] = None, length: Optional[int] = None) -> JointState:
    """
    Mel-aware starting point: Y0 = (EᵀM)₊ rescaled so ‖EY0‖ = ‖M‖, Z0 = P_C(Y0 e^{iθ})
    """
    if config is None:
        config = StftConfig()
    if M.shape[0] != fb.n_mels or fb.n_bins != config.n_bins:
        raise InvalidInputError(f"Mel-spectrogram {M.shape}, filterbank {fb} and {config} disagree")

    Y0 = project_nonneg(fb.E.T @ M.data)
    mel_norm = np.linalg.norm(fb.E @ Y0)
    if mel_norm > 0.0:
        Y0 = Y0 * (np.linalg.norm(M.data) / mel_norm)
    return init_from_magnitude(Y0, config, cfg, mode, length)


def cascade(M: MelGram, fb: MelFilterbank, cfg: AlgoConfig, phase_method: str = "pg",
            config: Optional[StftConfig] = None, length: Optional[int] = None,
            mode: str = "random_phase", targets: Optional[TraceTargets] = None,
            lsq_iters: int = DEFAULT_LSQ_ITERS, lsq_tol: float = DEFAULT_LSQ_TOL) -> tuple:
    """
    Two-stage baseline: recover Y from M by nonnegative least squares,
    then reconstruct the phase with PG-GLA or ADMM-GLA
    """
    if config is None:
        config = StftConfig()
    solved = invert_mel_lsq(M, fb, iters=lsq_iters, tol=lsq_tol)
    start = init_from_magnitude(solved.magnitude.data, config, cfg, mode, length)
    X0 = start.spectrogram()
    targets = _default_targets(targets, M, fb)

    if phase_method == "pg":
        return pg_gla(solved.magnitude, X0, cfg, targets)
    if phase_method == "admm":
        return admm_gla(solved.magnitude, X0, cfg, targets)
    raise InvalidInputError(f"Unknown phase method {phase_method!r}")


def run_algorithm(name: str, M: MelGram, fb: MelFilterbank, config: StftConfig, cfg: AlgoConfig,
                  length: Optional[int] = None, reference: Optional[MagnitudeGram] = None,
                  mode: str = "random_phase", timing: bool = True,
                  lsq_iters: int = DEFAULT_LSQ_ITERS, lsq_tol: float = DEFAULT_LSQ_TOL) -> tuple:
    """
    Dispatch one named algorithm

    pg-gla and admm-gla reconstruct the phase of the reference full-band
    magnitude; the joint and cascade methods start from the mel-spectrogram.
    """
    targets = TraceTargets(mel=M, filterbank=fb, reference=reference, timing=timing)

    if name in ("pg-gla", "admm-gla"):
        if reference is None:
            raise InvalidInputError(f"{name} needs the full-band reference magnitude")
        start = init_from_magnitude(reference.data, config, cfg, mode, length)
        method = pg_gla if name == "pg-gla" else admm_gla
        return method(reference, start.spectrogram(), cfg, targets)

    if name in ("ipalm-joint", "admm-joint"):
        start = init_state(M, fb, cfg, mode, config, length)
        method = ipalm_joint if name == "ipalm-joint" else admm_joint
        return method(M, fb, start, cfg, targets)

    if name in ("cascade-pg", "cascade-admm"):
        return cascade(M, fb, cfg, name.split("-")[1], config, length, mode, targets, lsq_iters, lsq_tol)

    raise InvalidInputError(f"Unknown algorithm {name!r}; choose from {ALGORITHMS}")
