"""
Tests for spectral convergence, the joint objective and paired comparison
"""

import math

import numpy as np
import pytest

from melinv.errors import InvalidInputError
from melinv.mel import MagnitudeGram, MelGram, mel_compress
from melinv.metrics import (FLOOR_DB, MetricReport, joint_objective, paired_comparison, sc, scm,
                            score_reconstruction, spectral_convergence_db)
from melinv.stft import Signal, stft

from conftest import stft_oracle


def test_exact_match_clamps_to_floor():
    target = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert spectral_convergence_db(target.copy(), target) == FLOOR_DB == -300.0


def test_zero_estimate_is_zero_db():
    assert spectral_convergence_db(np.zeros(4), np.ones(4)) == 0.0


def test_scaled_estimates():
    target = np.arange(1.0, 7.0)
    assert spectral_convergence_db(2.0 * target, target) == pytest.approx(0.0, abs=1e-12)
    assert spectral_convergence_db(0.5 * target, target) == pytest.approx(20.0 * math.log10(0.5))


def test_tiny_error_clamps():
    target = np.ones(4)
    assert spectral_convergence_db(target * (1.0 + 1e-16), target) >= FLOOR_DB


def test_zero_target_rejected():
    with pytest.raises(InvalidInputError):
        spectral_convergence_db(np.ones(3), np.zeros(3))


def test_scm_and_sc_match_definition(small_config, small_fb, rng):
    for _ in range(100):
        n_samples = int(rng.integers(100, 400))
        reference = rng.standard_normal(n_samples)
        estimate = reference + 0.3 * rng.standard_normal(n_samples)

        A = np.abs(stft_oracle(reference, small_config))
        M = small_fb.E @ A
        A_hat = np.abs(stft_oracle(estimate, small_config))
        expected_scm = 20.0 * math.log10(np.linalg.norm(small_fb.E @ A_hat - M) / np.linalg.norm(M))
        expected_sc = 20.0 * math.log10(np.linalg.norm(A_hat - A) / np.linalg.norm(A))

        xhat = Signal(estimate, 8000)
        assert scm(xhat, MelGram(M), small_fb, small_config) == pytest.approx(expected_scm, abs=1e-9)
        assert sc(xhat, MagnitudeGram(A), small_config) == pytest.approx(expected_sc, abs=1e-9)


def test_identical_signal_scores_floor(tone, small_config, small_fb):
    A = MagnitudeGram(stft(tone, small_config).magnitude())
    M = mel_compress(A, small_fb)
    assert scm(tone, M, small_fb, small_config) == FLOOR_DB
    assert sc(tone, A, small_config) == FLOOR_DB


def test_silent_reconstruction_scores_zero_db(tone, small_config, small_fb):
    A = MagnitudeGram(stft(tone, small_config).magnitude())
    silence = Signal(np.zeros(len(tone)), tone.sample_rate)
    assert scm(silence, mel_compress(A, small_fb), small_fb, small_config) == 0.0
    assert sc(silence, A, small_config) == 0.0


def test_score_reconstruction_report(tone, small_config, small_fb):
    A = MagnitudeGram(stft(tone, small_config).magnitude())
    M = mel_compress(A, small_fb)
    silence = Signal(np.zeros(len(tone)), tone.sample_rate)

    report = score_reconstruction("tone", silence, M, small_fb, small_config, A, objective=1.5)
    assert report == MetricReport("tone", 0.0, 0.0, 1.5)
    assert score_reconstruction("tone", tone, M, small_fb, small_config).sc_db is None


def test_length_argument_trims_reconstruction(tone, small_config):
    A = MagnitudeGram(stft(tone, small_config).magnitude())
    longer = Signal(np.concatenate([tone.samples, np.ones(100)]), tone.sample_rate)
    assert sc(longer, A, small_config, length=len(tone)) == FLOOR_DB


def test_frame_mismatch_rejected(tone, small_config, small_fb):
    A = MagnitudeGram(stft(tone, small_config).magnitude())
    short = Signal(tone.samples[:200], tone.sample_rate)
    with pytest.raises(InvalidInputError):
        sc(short, A, small_config)
    with pytest.raises(InvalidInputError):
        scm(short, mel_compress(A, small_fb), small_fb, small_config)


def test_zero_references_rejected(tone, small_config, small_fb):
    n_frames = stft(tone, small_config).n_frames
    with pytest.raises(InvalidInputError):
        scm(tone, MelGram(np.zeros((small_fb.n_mels, n_frames))), small_fb, small_config)
    with pytest.raises(InvalidInputError):
        sc(tone, MagnitudeGram(np.zeros((small_config.n_bins, n_frames))), small_config)


def test_joint_objective_example(small_fb):
    X = np.full((small_fb.n_bins, 2), 2.0 + 0j)
    Y = np.ones((small_fb.n_bins, 2))
    M = small_fb.E @ Y
    # mel term vanishes; magnitude term is ½·F·2·(2 − 1)²
    assert joint_objective(X, Y, M, small_fb, 1000.0) == pytest.approx(small_fb.n_bins)
    assert joint_objective(X, Y, M + 1.0, small_fb, 2.0) == pytest.approx(
        small_fb.n_bins + 2.0 * 0.5 * small_fb.n_mels * 2)


def test_joint_objective_checks_shapes(small_fb):
    with pytest.raises(InvalidInputError):
        joint_objective(np.ones((small_fb.n_bins, 2)), np.ones((small_fb.n_bins, 3)),
                        np.ones((small_fb.n_mels, 2)), small_fb, 1.0)


def test_paired_comparison_matches_formula(rng):
    a = rng.standard_normal(10) - 30.0
    b = a + 2.0 + 0.5 * rng.standard_normal(10)
    report = paired_comparison(a, b)

    d = a - b
    expected_t = d.mean() / (d.std(ddof=1) / math.sqrt(d.size))
    assert report.n == 10
    assert report.mean_diff == pytest.approx(d.mean())
    assert report.t_statistic == pytest.approx(expected_t)
    assert 0.0 <= report.p_value < 0.05


def test_paired_comparison_needs_two_pairs():
    with pytest.raises(InvalidInputError):
        paired_comparison([1.0], [2.0])
    with pytest.raises(InvalidInputError):
        paired_comparison([1.0, 2.0], [1.0, 2.0, 3.0])
