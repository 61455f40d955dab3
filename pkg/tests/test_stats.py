import numpy as np
import pytest

from rwre_lab import rng, stats
from rwre_lab.errors import ConfigurationError


def test_covariance_matches_brute_force_jackknife():
    gen = rng.generator(5)
    n = 64
    positions = gen.normal(size=(150, 2)) * np.sqrt(n) * np.array([0.7, 1.2])
    est = stats.covariance_estimate(positions, n)
    y = positions / np.sqrt(n)
    assert np.allclose(est.matrix, np.cov(y.T, ddof=1), atol=1e-12)
    m = len(y)
    loo = np.stack([np.cov(np.delete(y, t, axis=0).T, ddof=1) for t in range(m)])
    stderr = np.sqrt((m - 1) / m * ((loo - loo.mean(axis=0)) ** 2).sum(axis=0))
    assert np.allclose(est.stderr, stderr, atol=1e-10)
    assert est.trace == pytest.approx(est.matrix[0, 0] + est.matrix[1, 1])


def test_covariance_guards():
    with pytest.raises(ConfigurationError):
        stats.covariance_estimate(np.zeros((50, 2)), 10)
    est = stats.covariance_estimate(np.random.default_rng(0).normal(size=(120, 2)), 0)
    assert np.all(est.matrix == 0.0)


def test_gaussianity_calibrated_on_normals():
    gen = rng.generator(11)
    times = np.array([100, 200])
    mid = gen.normal(size=(2000, 2)) * np.sqrt(100) * 0.8
    inc = gen.normal(size=(2000, 2)) * np.sqrt(100) * 0.8
    checkpoints = np.stack([mid, mid + inc], axis=1)
    report = stats.gaussianity_test(checkpoints, times)
    assert report.ks_pvalue.shape == (2, 2)
    assert report.min_pvalue() > 1e-4
    # the increments are built independent here, so correlations stay small
    assert report.increment_correlation is not None
    assert np.max(np.abs(report.increment_correlation)) < 0.1


def test_gaussianity_rejects_small_samples():
    with pytest.raises(ConfigurationError):
        stats.gaussianity_test(np.zeros((100, 1, 2)), [10])


def test_epoch_detector_constant_axis():
    axes = np.zeros(50, dtype=np.int8)
    report = stats.epoch_detector(axes, 0.5, [18, 19, 20, 50])
    assert report.qualifies.tolist() == [False, True, True, True]
    assert report.axis[1] == 0
    # the 18-move window holds only 9 moves, so it drops out of the denominator
    assert report.window_moves[0] == 9
    assert report.frequency == 1.0
    assert report.any_epoch


def test_epoch_detector_alternating_axes():
    axes = np.tile([0, 1], 40)
    report = stats.epoch_detector(axes, 0.5, [20, 40, 80])
    assert not report.any_epoch


def test_epoch_detector_switch_point():
    axes = np.concatenate([np.tile([0, 1], 15), np.ones(30, dtype=int)])
    report = stats.epoch_detector(axes, 0.4, [40, 60])
    # the window at 40 still straddles the alternating prefix
    assert report.qualifies.tolist() == [False, True]
    assert report.axis[1] == 1


def test_epoch_detector_guards():
    with pytest.raises(ConfigurationError):
        stats.epoch_detector(np.zeros(10, dtype=int), 1.5, [5])
    with pytest.raises(ConfigurationError):
        stats.epoch_detector(np.zeros(10, dtype=int), 0.5, [11])


def test_epoch_frequency_comparison_extremes():
    sep = stats.epoch_frequency_comparison(np.ones(100, dtype=bool), np.zeros(100, dtype=bool))
    assert sep["test_rate"] == 1.0
    assert sep["baseline_rate"] == 0.0
    assert sep["baseline_rate_smoothed"] == pytest.approx(1.0 / 102.0)
    assert sep["binomial_pvalue"] < 1e-100
    assert sep["fisher_pvalue"] < 1e-20
    same = stats.epoch_frequency_comparison(np.zeros(100, dtype=bool), np.zeros(100, dtype=bool))
    assert same["binomial_pvalue"] > 0.3
    assert same["k_test"] == 0 and same["n_test"] == 100


def test_diffusion_bound_check_and_skip():
    matrix = 0.5 * np.eye(2)
    est = stats.CovarianceEstimate(matrix, np.full((2, 2), 0.01), 1000, 5000)
    report = stats.diffusion_lower_bound_check(est, gap_mean=3.0, n_gaps=4000)
    assert report.holds and not report.skipped
    assert report.bound == pytest.approx(1.0 / 3.0)
    skipped = stats.diffusion_lower_bound_check(est, gap_mean=float("nan"), n_gaps=0)
    assert skipped.skipped and not skipped.holds
    # a too-small diagonal fails the floor
    low = stats.CovarianceEstimate(0.2 * np.eye(2), np.full((2, 2), 0.01), 1000, 5000)
    assert not stats.diffusion_lower_bound_check(low, gap_mean=3.0, n_gaps=4000).holds
