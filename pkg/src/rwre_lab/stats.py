"""Diffusive-limit statistics: covariance, gaussianity, epochs, lower bounds.

Estimators here consume the ensemble arrays produced by the walk module.
The covariance of the rescaled endpoint carries jackknife standard errors;
gaussianity is probed per coordinate with Kolmogorov-Smirnov against a
centered normal whose variance is estimated from the same sample, plus a
correlation check between disjoint path increments. The epoch detector
scans for late time windows in which every move shares one axis, the
signature mechanism of the known non-Gaussian construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from .errors import ConfigurationError


@dataclass
class CovarianceEstimate:
    """Sample covariance of X_n / sqrt(n) with jackknife standard errors."""

    matrix: np.ndarray
    stderr: np.ndarray
    n: int
    trials: int

    @property
    def d(self) -> int:
        return self.matrix.shape[0]

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix))

    def trace_stderr(self) -> float:
        return float(np.sqrt((np.diagonal(self.stderr) ** 2).sum()))


def covariance_estimate(positions: np.ndarray, n: int) -> CovarianceEstimate:
    """Covariance of the diffusively rescaled endpoints.

    positions: (trials, d) endpoints X_n. Jackknife errors come from the
    leave-one-out covariances, assembled from sufficient statistics so the
    cost stays linear in the number of trials.
    """
    positions = np.asarray(positions, dtype=float)
    trials, d = positions.shape
    if trials < 100:
        raise ConfigurationError("covariance estimation needs at least 100 trials")
    if n == 0:
        zero = np.zeros((d, d))
        return CovarianceEstimate(zero, zero, 0, trials)
    y = positions / math.sqrt(n)
    s1 = y.sum(axis=0)
    s2 = np.einsum("ti,tj->ij", y, y)
    m = trials
    # leave-one-out covariance for each t, with (m-2) in the denominator
    loo_mean = (s1[None, :] - y) / (m - 1)
    cross = s2[None, :, :] - np.einsum("ti,tj->tij", y, y)
    loo_cov = (cross - (m - 1) * np.einsum("ti,tj->tij", loo_mean, loo_mean)) / (m - 2)
    full_mean = s1 / m
    full_cov = (s2 - m * np.outer(full_mean, full_mean)) / (m - 1)
    jack_mean = loo_cov.mean(axis=0)
    stderr = np.sqrt((m - 1) / m * ((loo_cov - jack_mean) ** 2).sum(axis=0))
    return CovarianceEstimate(full_cov, stderr, int(n), int(trials))


@dataclass
class GaussianityReport:
    times: np.ndarray
    ks_statistic: np.ndarray
    ks_pvalue: np.ndarray
    increment_correlation: np.ndarray | None
    trials: int

    def min_pvalue(self) -> float:
        return float(self.ks_pvalue.min())


def gaussianity_test(checkpoints: np.ndarray, times) -> GaussianityReport:
    """Marginal KS tests at each checkpoint plus an increment decoupling check.

    checkpoints: (trials, len(times), d) positions at the given times. Each
    coordinate of X_t / sqrt(t) is tested against a centered normal with the
    sample standard deviation. When some time in the grid is exactly twice
    another, the correlation of the two disjoint increments is reported.
    """
    times = np.asarray(times, dtype=np.int64)
    checkpoints = np.asarray(checkpoints, dtype=float)
    trials, n_times, d = checkpoints.shape
    if trials < 1000:
        raise ConfigurationError("gaussianity testing needs at least 1000 trials")
    if n_times != times.size:
        raise ConfigurationError("checkpoint array does not match the time grid")
    ks_stat = np.zeros((n_times, d))
    ks_p = np.zeros((n_times, d))
    for ti, t in enumerate(times):
        scale = math.sqrt(max(int(t), 1))
        for a in range(d):
            values = checkpoints[:, ti, a] / scale
            sigma = values.std(ddof=1)
            if sigma == 0:
                ks_stat[ti, a] = 1.0
                ks_p[ti, a] = 0.0
                continue
            stat, p = sps.kstest(values, "norm", args=(0.0, sigma))
            ks_stat[ti, a] = stat
            ks_p[ti, a] = p
    corr = None
    for ti, t in enumerate(times):
        half = np.flatnonzero(times * 2 == t)
        if half.size:
            hi = checkpoints[:, ti, :]
            mid = checkpoints[:, half[0], :]
            inc = hi - mid
            corr = np.array(
                [float(np.corrcoef(inc[:, a], mid[:, a])[0, 1]) for a in range(d)]
            )
            break
    return GaussianityReport(times, ks_stat, ks_p, corr, int(trials))


@dataclass
class EpochReport:
    """Single-axis suffix windows [(1-beta)T, T] over a grid of T values."""

    beta: float
    t_grid: np.ndarray
    qualifies: np.ndarray
    axis: np.ndarray
    window_moves: np.ndarray
    min_moves: int

    @property
    def frequency(self) -> float:
        considered = self.window_moves >= self.min_moves
        if not considered.any():
            return 0.0
        return float(self.qualifies[considered].mean())

    @property
    def any_epoch(self) -> bool:
        return bool(self.qualifies.any())


def epoch_detector(axes: np.ndarray, beta: float, t_grid, min_moves: int = 10) -> EpochReport:
    """Exact scan for single-axis windows [(1-beta)T, T] in one move list.

    axes: per-move axis indices (moves 1..n). A grid time T qualifies when
    every move in ((1-beta)T, T] shares one axis and the window holds at
    least `min_moves` moves (shorter windows are noise).
    """
    if not 0 < beta < 1:
        raise ConfigurationError("beta must sit in (0, 1)")
    axes = np.asarray(axes)
    n = axes.size
    t_grid = np.asarray(t_grid, dtype=np.int64)
    if np.any(t_grid < 1) or np.any(t_grid > n):
        raise ConfigurationError("time grid must stay within the trajectory length")
    # last_change[t] = largest s <= t (moves indexed from 1) with a new axis at s
    change = np.empty(n, dtype=np.int64)
    change[0] = 1
    diff = axes[1:] != axes[:-1]
    change[1:] = np.where(diff, np.arange(2, n + 1), 0)
    last_change = np.maximum.accumulate(change)

    window_start = np.floor((1.0 - beta) * t_grid).astype(np.int64)  # window is (start, T]
    n_moves = t_grid - window_start
    qualifies = np.zeros(t_grid.size, dtype=bool)
    axis = np.full(t_grid.size, -1, dtype=np.int64)
    valid = n_moves >= min_moves
    ok = valid & (last_change[t_grid - 1] <= window_start + 1)
    qualifies[ok] = True
    axis[ok] = axes[t_grid[ok] - 1]
    return EpochReport(
        beta=float(beta),
        t_grid=t_grid,
        qualifies=qualifies,
        axis=axis,
        window_moves=n_moves,
        min_moves=int(min_moves),
    )


@dataclass
class DiffusionBoundReport:
    diag: np.ndarray
    diag_stderr: np.ndarray
    gap_mean: float
    bound: float
    holds_per_axis: np.ndarray
    holds: bool
    skipped: bool
    reason: str = ""


def diffusion_lower_bound_check(
    cov: CovarianceEstimate, gap_mean: float, n_gaps: int
) -> DiffusionBoundReport:
    """Check the diffusion floor: each diagonal entry against 1 / mean gap.

    Uses M_ii + 3 stderr >= 1 / gap_mean, with the gap mean taken from the
    bulk of the refresh sequence. Degenerate refresh data (no gaps at all)
    skips the check with a warning instead of failing it.
    """
    diag = np.diagonal(cov.matrix).copy()
    diag_err = np.diagonal(cov.stderr).copy()
    if n_gaps < 1 or not np.isfinite(gap_mean) or gap_mean <= 0:
        return DiffusionBoundReport(
            diag=diag,
            diag_stderr=diag_err,
            gap_mean=float(gap_mean),
            bound=float("nan"),
            holds_per_axis=np.zeros(diag.size, dtype=bool),
            holds=False,
            skipped=True,
            reason="no refresh gaps observed; check skipped",
        )
    bound = 1.0 / float(gap_mean)
    holds_axis = diag + 3.0 * diag_err >= bound
    return DiffusionBoundReport(
        diag=diag,
        diag_stderr=diag_err,
        gap_mean=float(gap_mean),
        bound=bound,
        holds_per_axis=holds_axis,
        holds=bool(holds_axis.all()),
        skipped=False,
    )


def epoch_frequency_comparison(
    flags_test: np.ndarray, flags_baseline: np.ndarray
) -> dict:
    """One-sided comparison of per-trajectory epoch indicators.

    Tests whether the epoch rate behind `flags_test` exceeds the baseline
    rate, with the baseline probability add-one smoothed so a zero-count
    control cannot make the test degenerate; a Fisher exact test on the
    2x2 table is reported alongside.
    """
    flags_test = np.asarray(flags_test, dtype=bool)
    flags_baseline = np.asarray(flags_baseline, dtype=bool)
    k_t, n_t = int(flags_test.sum()), flags_test.size
    k_b, n_b = int(flags_baseline.sum()), flags_baseline.size
    p_base = (k_b + 1) / (n_b + 2)
    binom_p = float(sps.binomtest(k_t, n_t, p_base, alternative="greater").pvalue)
    table = [[k_t, n_t - k_t], [k_b, n_b - k_b]]
    fisher_p = float(sps.fisher_exact(table, alternative="greater")[1])
    return {
        "test_rate": k_t / n_t if n_t else 0.0,
        "baseline_rate": k_b / n_b if n_b else 0.0,
        "baseline_rate_smoothed": p_base,
        "binomial_pvalue": binom_p,
        "fisher_pvalue": fisher_p,
        "n_test": n_t,
        "n_baseline": n_b,
        "k_test": k_t,
        "k_baseline": k_b,
    }
