"""
Tests for the reconstruction algorithms
"""

import time

import numpy as np
import pytest

from melinv.algorithms import (AlgoConfig, JointState, TraceTargets, admm_gla, admm_joint, cascade,
                               init_from_magnitude, init_state, ipalm_joint, pg_gla, run_algorithm)
from melinv.corpus import speech_like_clip, two_tone
from melinv.errors import InvalidInputError
from melinv.mel import MagnitudeGram, MelFilterbank, MelGram, build_mel_filterbank, mel_compress
from melinv.metrics import scm
from melinv.stft import StftConfig, get_operator, istft, stft


@pytest.fixture
def truth(tone, small_config, small_fb):
    """Consistent spectrogram of a two-tone signal with its magnitude and mel target"""
    X = stft(tone, small_config)
    A = MagnitudeGram(X.magnitude())
    return X, A, mel_compress(A, small_fb)


def _state_at(X, A):
    zeros = np.zeros_like(A.data)
    return JointState(X=X.data.copy(), Z=X.data.copy(), Z_old=X.data.copy(), V=np.zeros_like(X.data),
                      Y=A.data.copy(), W=A.data.copy(), U=zeros, config=X.config, length=X.length)


def _scale(X):
    return max(1.0, float(np.abs(X.data).max()))


def test_algo_config_defaults_per_algorithm():
    assert AlgoConfig.for_algorithm("admm-joint") == AlgoConfig(iters=500, rho=0.1, lam=5000.0)
    ipalm = AlgoConfig.for_algorithm("ipalm-joint", iters=None, lam=None)
    assert (ipalm.lam, ipalm.alpha, ipalm.iters) == (10.0, 0.99, 500)
    assert AlgoConfig.for_algorithm("admm-joint", rho=0.5).rho == 0.5
    with pytest.raises(InvalidInputError):
        AlgoConfig.for_algorithm("magic")


@pytest.mark.parametrize("kwargs", [{"iters": -1}, {"rho": 0.0}, {"lam": -1.0}, {"trace_every": 0}, {"mu": 0.0}])
def test_algo_config_validates(kwargs):
    with pytest.raises(InvalidInputError):
        AlgoConfig(**kwargs)


def test_pg_gla_fixed_point(truth):
    X, A, _ = truth
    result, _ = pg_gla(A, X, AlgoConfig(iters=5, mu=0.7))
    assert np.max(np.abs(result.data - X.data)) < 1e-8 * _scale(X)


def test_admm_gla_fixed_point(truth):
    X, A, _ = truth
    result, trace = admm_gla(A, X, AlgoConfig(iters=5, rho=0.1))
    assert np.max(np.abs(result.data - X.data)) < 1e-8 * _scale(X)
    assert np.max(np.abs(trace.state.V)) < 1e-8 * _scale(X)


def test_admm_joint_fixed_point(truth, small_fb):
    X, A, M = truth
    _, trace = admm_joint(M, small_fb, _state_at(X, A), AlgoConfig(iters=5, lam=5000.0, rho=0.1))
    final = trace.state
    scale = _scale(X)
    for name in ("X", "Z"):
        assert np.max(np.abs(getattr(final, name) - X.data)) < 1e-8 * scale
    for name in ("Y", "W"):
        assert np.max(np.abs(getattr(final, name) - A.data)) < 1e-8 * scale
    assert np.max(np.abs(final.V)) < 1e-8 * scale
    assert np.max(np.abs(final.U)) < 1e-8 * scale


def test_ipalm_joint_fixed_point(truth, small_fb):
    X, A, M = truth
    _, trace = ipalm_joint(M, small_fb, _state_at(X, A), AlgoConfig(iters=5, lam=10.0, alpha=0.99))
    final = trace.state
    assert np.max(np.abs(final.Z - X.data)) < 1e-8 * _scale(X)
    assert np.max(np.abs(final.Y - A.data)) < 1e-8 * _scale(X)


def test_zero_iterations_return_initial_state(truth, small_fb):
    X, A, M = truth
    start = init_state(M, small_fb, AlgoConfig(), config=X.config, length=X.length)
    Z, trace = admm_joint(M, small_fb, start, AlgoConfig(iters=0))
    np.testing.assert_array_equal(Z.data, start.Z)
    assert [r.iteration for r in trace.records] == [0]

    gla, gla_trace = pg_gla(A, start.spectrogram(), AlgoConfig(iters=0))
    np.testing.assert_array_equal(gla.data, start.Z)
    assert len(gla_trace.records) == 1


def test_pg_gla_with_unit_step_is_griffin_lim(truth):
    X, A, _ = truth
    start = init_from_magnitude(A.data, X.config, AlgoConfig(seed=3), length=X.length).spectrogram()
    result, _ = pg_gla(A, start, AlgoConfig(iters=20, mu=1.0))

    current = start
    for _ in range(20):
        magnitude = np.abs(current.data)
        phase = np.divide(current.data, magnitude, out=np.zeros_like(current.data), where=magnitude > 0)
        signal = istft(current.with_data(A.data * phase))
        current = stft(signal, X.config)
    np.testing.assert_allclose(result.data, current.data, rtol=0, atol=1e-10 * _scale(X))


def test_runs_are_deterministic(truth, small_fb, small_config):
    X, A, M = truth
    cfg = AlgoConfig(iters=15, seed=7)
    first, _ = run_algorithm("admm-joint", M, small_fb, small_config, cfg, X.length, timing=False)
    second, _ = run_algorithm("admm-joint", M, small_fb, small_config, cfg, X.length, timing=False)
    np.testing.assert_array_equal(first.data, second.data)


def test_seed_changes_random_phase(truth, small_fb, small_config):
    _, _, M = truth
    a = init_state(M, small_fb, AlgoConfig(seed=0), config=small_config)
    b = init_state(M, small_fb, AlgoConfig(seed=1), config=small_config)
    assert not np.array_equal(a.Z, b.Z)
    zero_a = init_state(M, small_fb, AlgoConfig(seed=0), mode="zero_phase", config=small_config)
    zero_b = init_state(M, small_fb, AlgoConfig(seed=1), mode="zero_phase", config=small_config)
    np.testing.assert_array_equal(zero_a.Z, zero_b.Z)


def test_init_state_matches_mel_energy(truth, small_fb, small_config):
    _, _, M = truth
    start = init_state(M, small_fb, AlgoConfig(), config=small_config)
    assert start.Y.min() >= 0.0
    assert np.linalg.norm(small_fb.E @ start.Y) == pytest.approx(np.linalg.norm(M.data))
    projected = get_operator(small_config).project(start.Z, start.length)
    np.testing.assert_allclose(projected, start.Z, atol=1e-10 * _scale_array(start.Z))


def _scale_array(values):
    return max(1.0, float(np.abs(values).max()))


def test_unknown_init_mode_rejected(truth, small_fb, small_config):
    _, _, M = truth
    with pytest.raises(InvalidInputError):
        init_state(M, small_fb, AlgoConfig(), mode="noise", config=small_config)


def test_admm_joint_dual_bookkeeping(truth, small_fb):
    X, A, M = truth
    cfg = AlgoConfig(iters=7, lam=100.0, rho=0.2)
    start = init_state(M, small_fb, cfg, config=X.config, length=X.length)
    _, before = admm_joint(M, small_fb, start, cfg)
    _, after = admm_joint(M, small_fb, before.state, AlgoConfig(iters=1, lam=100.0, rho=0.2))

    s0, s1 = before.state, after.state
    np.testing.assert_allclose(s1.V, s0.V + s1.Z - s1.X, atol=1e-12 * _scale_array(s1.Z))
    np.testing.assert_allclose(s1.U, s0.U + s1.Y - s1.W, atol=1e-12 * _scale_array(s1.Y))
    assert s1.iteration == 8


def test_joint_magnitudes_stay_nonnegative(truth, small_fb):
    X, A, M = truth
    for name, method in (("admm", admm_joint), ("ipalm", ipalm_joint)):
        cfg = AlgoConfig(iters=30, lam=50.0, rho=0.1)
        start = init_state(M, small_fb, cfg, config=X.config, length=X.length)
        _, trace = method(M, small_fb, start, cfg)
        assert trace.state.Y.min() >= 0.0, name


def test_trace_records_first_periodic_and_last(truth, small_fb):
    X, A, M = truth
    cfg = AlgoConfig(iters=25, trace_every=10)
    start = init_state(M, small_fb, cfg, config=X.config, length=X.length)
    _, trace = admm_joint(M, small_fb, start, cfg, TraceTargets(mel=M, filterbank=small_fb, reference=A,
                                                                timing=False))
    assert [r.iteration for r in trace.records] == [0, 10, 20, 25]
    assert all(r.elapsed_ms == 0.0 for r in trace.records)
    assert all(r.sc_db is not None for r in trace.records)

    frame = trace.to_frame()
    assert list(frame.columns) == ["iteration", "scm_db", "sc_db", "objective", "elapsed_ms"]
    assert len(frame) == 4


def test_trace_without_reference_leaves_sc_empty(truth, small_fb):
    X, _, M = truth
    cfg = AlgoConfig(iters=3)
    start = init_state(M, small_fb, cfg, config=X.config, length=X.length)
    _, trace = admm_joint(M, small_fb, start, cfg)
    assert trace.final().sc_db is None
    assert trace.to_frame()["sc_db"].isna().all()


def test_admm_joint_reduces_mel_error(truth, small_fb):
    X, A, M = truth
    cfg = AlgoConfig(iters=50)
    start = init_state(M, small_fb, cfg, config=X.config, length=X.length)
    _, trace = admm_joint(M, small_fb, start, cfg)
    assert trace.final().scm_db < trace.records[0].scm_db


def test_cascade_runs_both_phase_methods(truth, small_fb, small_config):
    X, A, M = truth
    for method in ("pg", "admm"):
        Z, trace = cascade(M, small_fb, AlgoConfig(iters=10), method, small_config, X.length)
        assert Z.shape == X.shape
        assert trace.final().scm_db is not None
    with pytest.raises(InvalidInputError):
        cascade(M, small_fb, AlgoConfig(iters=1), "nope", small_config, X.length)


def test_phase_only_methods_need_reference(truth, small_fb, small_config):
    X, A, M = truth
    with pytest.raises(InvalidInputError):
        run_algorithm("pg-gla", M, small_fb, small_config, AlgoConfig(iters=1), X.length)
    Z, _ = run_algorithm("admm-gla", M, small_fb, small_config, AlgoConfig(iters=2), X.length, reference=A)
    assert Z.shape == X.shape


def test_mismatched_shapes_rejected(truth, small_fb):
    X, A, M = truth
    with pytest.raises(InvalidInputError):
        pg_gla(MagnitudeGram(A.data[:, :-1]), X, AlgoConfig(iters=1))
    start = _state_at(X, A)
    with pytest.raises(InvalidInputError):
        admm_joint(mel_compress(MagnitudeGram(A.data[:, :-1]), small_fb), small_fb, start, AlgoConfig(iters=1))


def test_joint_methods_ignore_filterbank_scale(truth, small_fb):
    X, A, M = truth
    louder_fb = MelFilterbank(7.0 * small_fb.E, small_fb.sample_rate)
    louder_M = MelGram(7.0 * M.data)
    for method in (admm_joint, ipalm_joint):
        cfg = AlgoConfig(iters=20, lam=10.0, rho=0.1)
        start = init_state(M, small_fb, cfg, config=X.config, length=X.length)
        Z, _ = method(M, small_fb, start, cfg)
        Z_loud, _ = method(louder_M, louder_fb, start, cfg)
        np.testing.assert_allclose(Z_loud.data, Z.data, rtol=0, atol=1e-6 * _scale(X))


def test_ipalm_mel_step_uses_unit_gram(truth, small_fb):
    X, A, M = truth
    cfg = AlgoConfig(iters=1, lam=10.0, alpha=0.0)
    start = init_state(M, small_fb, cfg, config=X.config, length=X.length)
    _, trace = ipalm_joint(M, small_fb, start, cfg)

    E = small_fb.E / small_fb.spectral_norm()
    target = M.data / small_fb.spectral_norm()
    expected = start.Y - E.T @ (E @ start.Y - target)
    np.testing.assert_allclose(trace.state.W, expected, atol=1e-12 * _scale_array(start.Y))


# ---------------------------------------------------------------------------
# Regression examples on fixed seeded signals
# ---------------------------------------------------------------------------

SPEECH = StftConfig(window_length=1024, hop_length=256)


@pytest.fixture(scope="module")
def speech_fb():
    return build_mel_filterbank(80, SPEECH.n_bins, 16000)


@pytest.fixture(scope="module")
def chirp_start():
    """0.5 s speech-like chirp: reference magnitude and a random-phase start"""
    signal = speech_like_clip(0, duration=0.5, sample_rate=16000)
    A = MagnitudeGram(stft(signal, SPEECH).magnitude())
    start = init_from_magnitude(A.data, SPEECH, AlgoConfig(seed=0), length=len(signal))
    return A, start.spectrogram()


def test_pg_gla_lowers_sc_by_ten_db_on_chirp(chirp_start):
    A, X0 = chirp_start
    _, trace = pg_gla(A, X0, AlgoConfig(iters=100, mu=1.0), TraceTargets(reference=A, timing=False))
    assert trace.final().sc_db <= trace.records[0].sc_db - 10.0


def test_admm_gla_beats_pg_gla_on_chirp(chirp_start):
    A, X0 = chirp_start
    targets = TraceTargets(reference=A, timing=False)
    _, pg = pg_gla(A, X0, AlgoConfig(iters=100, mu=1.0), targets)
    _, admm = admm_gla(A, X0, AlgoConfig(iters=100, rho=0.1), targets)
    assert admm.final().sc_db <= pg.final().sc_db


def test_admm_joint_recovers_two_tone(speech_fb):
    signal = two_tone(duration=1.0, sample_rate=16000)
    M = mel_compress(MagnitudeGram(stft(signal, SPEECH).magnitude()), speech_fb)
    cfg = AlgoConfig.for_algorithm("admm-joint", iters=500)
    assert (cfg.lam, cfg.rho) == (5000.0, 0.1)
    Z, _ = run_algorithm("admm-joint", M, speech_fb, SPEECH, cfg, len(signal), timing=False)
    assert scm(istft(Z, sample_rate=16000), M, speech_fb, SPEECH) <= -20.0


# ---------------------------------------------------------------------------
# Reproduction on the synthetic speech-like corpus
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def speech_corpus(speech_fb):
    clips = []
    for seed in range(10):
        signal = speech_like_clip(seed, duration=1.0, sample_rate=16000)
        A = MagnitudeGram(stft(signal, SPEECH).magnitude())
        clips.append((signal, mel_compress(A, speech_fb)))
    return speech_fb, clips


def _median_scm(name, speech_corpus, **overrides):
    fb, clips = speech_corpus
    cfg = AlgoConfig.for_algorithm(name, **overrides)
    scores = []
    for signal, M in clips:
        Z, _ = run_algorithm(name, M, fb, SPEECH, cfg, len(signal), timing=False)
        scores.append(scm(istft(Z, sample_rate=16000), M, fb, SPEECH))
    return float(np.median(scores)), scores


@pytest.mark.slow
def test_admm_joint_ranks_first(speech_corpus):
    admm, _ = _median_scm("admm-joint", speech_corpus, iters=500)
    ipalm, _ = _median_scm("ipalm-joint", speech_corpus, iters=500)
    cascade_pg, _ = _median_scm("cascade-pg", speech_corpus, iters=500)
    admm_short, _ = _median_scm("admm-joint", speech_corpus, iters=100)

    assert admm < ipalm < cascade_pg
    assert admm_short <= ipalm + 1.0


@pytest.mark.slow
def test_admm_joint_is_robust_to_lambda(speech_corpus):
    medians = [_median_scm("admm-joint", speech_corpus, iters=500, lam=lam, rho=0.1)[0]
               for lam in (100.0, 1000.0, 5000.0, 10000.0)]
    assert max(medians) - min(medians) < 3.0


@pytest.mark.slow
def test_admm_joint_throughput(speech_fb):
    fb = speech_fb
    signal = speech_like_clip(0, duration=3.0, sample_rate=16000)
    M = mel_compress(MagnitudeGram(stft(signal, SPEECH).magnitude()), fb)

    timings = {}
    for name in ("admm-joint", "ipalm-joint"):
        cfg = AlgoConfig.for_algorithm(name, iters=500)
        start = time.perf_counter()
        run_algorithm(name, M, fb, SPEECH, cfg, len(signal), timing=False)
        timings[name] = time.perf_counter() - start

    assert timings["admm-joint"] < 30.0
    assert timings["admm-joint"] < 1.5 * timings["ipalm-joint"]
