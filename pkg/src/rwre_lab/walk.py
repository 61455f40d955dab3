"""Nearest-neighbor walks driven by balanced environments.

A step at site z picks axis i with probability 2 * half_weights[i](z) and an
independent fair sign. Refresh times partition a trajectory into segments
that have used every axis at least once; the walk observed at refresh times
is the rescaled walk, and the tail of the first refresh time T_1 is the
package's central diagnostic for non-ellipticity.

Everything here is vectorized over trials: step randomness is keyed on
(master seed, trial index, step index), so ensembles are reproducible
regardless of chunking or thread count.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import rng
from .env import EnvSpec, Environment, sample_laws
from .errors import ConfigurationError, DomainError, DomainExitError, HorizonError

DEFAULT_HORIZON = 10**7

_AXIS_STREAM, _SIGN_STREAM = 0, 1


@dataclass
class Trajectory:
    """A walk: start plus per-step (axis, sign) moves, positions derived."""

    start: np.ndarray
    axes: np.ndarray
    signs: np.ndarray

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=np.int64)
        self.axes = np.asarray(self.axes, dtype=np.int8)
        self.signs = np.asarray(self.signs, dtype=np.int8)
        if self.axes.shape != self.signs.shape:
            raise ConfigurationError("axes and signs must align")

    @property
    def d(self) -> int:
        return self.start.size

    @property
    def n_steps(self) -> int:
        return self.axes.size

    def positions(self) -> np.ndarray:
        """All visited positions, shape (n_steps + 1, d)."""
        steps = np.zeros((self.n_steps, self.d), dtype=np.int64)
        steps[np.arange(self.n_steps), self.axes] = self.signs
        out = np.empty((self.n_steps + 1, self.d), dtype=np.int64)
        out[0] = self.start
        np.cumsum(steps, axis=0, out=out[1:])
        out[1:] += self.start
        return out

    def to_csv(self, path: str) -> None:
        """Write moves and positions; row n=0 carries the start with blank move."""
        pos = self.positions()
        header = ["n", "axis", "sign"] + [f"x_{i + 1}" for i in range(self.d)]
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(header)
            writer.writerow([0, "", ""] + [int(v) for v in pos[0]])
            for n in range(self.n_steps):
                writer.writerow(
                    [n + 1, int(self.axes[n]), int(self.signs[n])] + [int(v) for v in pos[n + 1]]
                )


@dataclass
class RefreshTimes:
    """Refresh times T_0 = 0 < T_1 < ... along a trajectory."""

    times: np.ndarray
    cap: int | None

    @property
    def gaps(self) -> np.ndarray:
        return np.diff(self.times)


# -- law sources -------------------------------------------------------------


class _QuenchedSource:
    """All trials share one fixed environment."""

    def __init__(self, environment: Environment):
        self.environment = environment
        self.d = environment.d
        spec = getattr(environment, "spec", None)
        self._constant = (
            np.full(self.d, 1.0 / (2 * self.d))
            if spec is not None and spec.variant == "uniform-srw"
            else None
        )

    def half_weights(self, positions: np.ndarray, trial_ids: np.ndarray) -> np.ndarray:
        if self._constant is not None:
            return np.broadcast_to(self._constant, positions.shape)
        return self.environment.half_weights_at(positions)


class _AnnealedSource:
    """Each trial sees a fresh procedural environment under one master seed."""

    def __init__(self, spec: EnvSpec, seed: int):
        spec.validate()
        if not spec.is_single_site_iid:
            raise ConfigurationError("annealed sampling needs a single-site i.i.d. spec")
        self.spec = spec
        self.seed = int(seed)
        self.d = spec.d

    def half_weights(self, positions: np.ndarray, trial_ids: np.ndarray) -> np.ndarray:
        return sample_laws(self.spec, self.seed, positions, trial_ids=trial_ids)


def _as_source(env_or_spec, seed: int, mode: str):
    if mode == "annealed":
        if isinstance(env_or_spec, EnvSpec):
            return _AnnealedSource(env_or_spec, seed)
        spec = getattr(env_or_spec, "spec", None)
        if spec is None:
            raise ConfigurationError("annealed mode needs an EnvSpec or a procedural environment")
        return _AnnealedSource(spec, seed)
    if mode == "quenched":
        if isinstance(env_or_spec, Environment):
            return _QuenchedSource(env_or_spec)
        raise ConfigurationError("quenched mode needs an Environment")
    raise ConfigurationError(f"unknown mode {mode!r}")


# -- stepping ----------------------------------------------------------------


def _move_uniforms(walk_key: np.uint64, trial_ids: np.ndarray, step: int, stream: int) -> np.ndarray:
    return rng.u01(rng.key_mixin(walk_key, trial_ids, step), stream)


def _choose_moves(half_weights: np.ndarray, u_axis: np.ndarray, u_sign: np.ndarray):
    cumulative = np.cumsum(half_weights, axis=-1)
    cumulative /= cumulative[..., -1:]
    axes = (u_axis[..., None] >= cumulative[..., :-1]).sum(axis=-1).astype(np.int8)
    signs = np.where(u_sign < 0.5, 1, -1).astype(np.int8)
    return axes, signs


@dataclass
class EnsembleResult:
    start: np.ndarray
    final_positions: np.ndarray
    checkpoints: dict
    axes: np.ndarray | None
    signs: np.ndarray | None
    seed: int
    n_steps: int


def simulate_ensemble(
    environment: Environment,
    start,
    n_trials: int,
    n_steps: int,
    seed: int,
    *,
    keep_moves: bool = False,
    checkpoint_times: tuple = (),
) -> EnsembleResult:
    """Run n_trials independent walks of n_steps from a common start.

    Trial t's randomness is keyed on (seed, t), so any subset of trials can
    be reproduced independently. Checkpoint times record positions mid-walk.
    """
    source = _QuenchedSource(environment)
    d = source.d
    start = np.asarray(start, dtype=np.int64)
    positions = np.broadcast_to(start, (n_trials, d)).copy()
    trial_ids = np.arange(n_trials, dtype=np.int64)
    walk_key = rng.key(seed, rng.LABEL_WALK)
    axes_log = np.empty((n_trials, n_steps), dtype=np.int8) if keep_moves else None
    signs_log = np.empty((n_trials, n_steps), dtype=np.int8) if keep_moves else None
    wanted = {int(t) for t in checkpoint_times}
    checkpoints = {}
    for step in range(n_steps):
        try:
            hw = source.half_weights(positions, trial_ids)
        except DomainError as exc:
            raise DomainExitError(f"walk left the environment at step {step + 1}: {exc}", step + 1) from exc
        axes, signs = _choose_moves(
            hw,
            _move_uniforms(walk_key, trial_ids, step, _AXIS_STREAM),
            _move_uniforms(walk_key, trial_ids, step, _SIGN_STREAM),
        )
        positions[trial_ids, axes] += signs
        if keep_moves:
            axes_log[:, step] = axes
            signs_log[:, step] = signs
        if step + 1 in wanted:
            checkpoints[step + 1] = positions.copy()
    return EnsembleResult(
        start=start,
        final_positions=positions,
        checkpoints=checkpoints,
        axes=axes_log,
        signs=signs_log,
        seed=int(seed),
        n_steps=int(n_steps),
    )


def simulate(environment: Environment, start, n_steps: int, seed: int) -> Trajectory:
    """A single walk; trial index 0 of the ensemble keyed by `seed`."""
    result = simulate_ensemble(environment, start, 1, n_steps, seed, keep_moves=True)
    return Trajectory(start=result.start, axes=result.axes[0], signs=result.signs[0])


# -- refresh times -----------------------------------------------------------


def refresh_times(trajectory: Trajectory, cap: int | None = None) -> RefreshTimes:
    """Exact refresh-time scan.

    With `cap`, each segment truncates at `cap` steps: the next time is
    min(first step after which every axis has appeared, previous time + cap).
    """
    d = trajectory.d
    if cap is not None and cap < 1:
        raise ConfigurationError("cap must be >= 1")
    full = (1 << d) - 1
    times = [0]
    seen = 0
    segment_start = 0
    for n, axis in enumerate(trajectory.axes, start=1):
        seen |= 1 << int(axis)
        if seen == full:
            times.append(n)
            seen = 0
            segment_start = n
        elif cap is not None and n - segment_start == cap:
            times.append(n)
            seen = 0
            segment_start = n
    return RefreshTimes(times=np.asarray(times, dtype=np.int64), cap=cap)


def refresh_gap_scan(axes_matrix: np.ndarray, d: int):
    """Refresh gaps of many trajectories at once.

    Returns (trial_ids, gap_indices, gap_lengths) over all completed
    refreshes, scanning the (n_trials, n_steps) axis matrix column-wise.
    """
    n_trials, n_steps = axes_matrix.shape
    full = np.uint8((1 << d) - 1)
    seen = np.zeros(n_trials, dtype=np.uint8)
    last = np.zeros(n_trials, dtype=np.int64)
    counter = np.zeros(n_trials, dtype=np.int64)
    ids, indices, lengths = [], [], []
    one = np.uint8(1)
    for step in range(n_steps):
        seen |= one << axes_matrix[:, step].astype(np.uint8)
        done = seen == full
        if done.any():
            who = np.flatnonzero(done)
            ids.append(who)
            indices.append(counter[who].copy())
            lengths.append(step + 1 - last[who])
            last[who] = step + 1
            counter[who] += 1
            seen[who] = 0
    if not ids:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty, empty
    return np.concatenate(ids), np.concatenate(indices), np.concatenate(lengths)


def bulk_gap_mean(axes_matrix: np.ndarray, d: int):
    """Mean refresh gap over the per-trajectory bulk (middle half of gaps).

    Gaps with index k in [K/4, 3K/4) within their own trajectory's K gaps
    count; edge effects from the first and last stretches are discarded.
    Returns (mean, count).
    """
    ids, indices, lengths = refresh_gap_scan(axes_matrix, d)
    if ids.size == 0:
        return np.nan, 0
    counts = np.bincount(ids, minlength=int(ids.max()) + 1)
    lo = counts[ids] // 4
    hi = (3 * counts[ids]) // 4
    keep = (indices >= lo) & (indices < hi)
    if not keep.any():
        return np.nan, 0
    return float(lengths[keep].mean()), int(keep.sum())


# -- refresh-time sampling ----------------------------------------------------


@dataclass
class RefreshSampleResult:
    """One T_1-sample per trial, with stopped positions and axis bookkeeping."""

    durations: np.ndarray
    refreshed: np.ndarray
    positions: np.ndarray
    start: np.ndarray
    cap: int | None
    first_time: np.ndarray | None = None
    first_sign: np.ndarray | None = None


def sample_refresh(
    env_or_spec,
    start,
    n_trials: int,
    seed: int,
    *,
    cap: int | None = None,
    horizon: int = DEFAULT_HORIZON,
    mode: str = "quenched",
    track_axis: int | None = None,
    trial_offset: int = 0,
) -> RefreshSampleResult:
    """Sample min(T_1, cap) for n_trials walks from `start`.

    Quenched mode fixes one environment; annealed mode draws a fresh
    procedural environment per trial. With `track_axis`, the first time and
    sign of a move along that axis are recorded (entries -2 when the walk
    stopped first). Raises HorizonError if a walk is still unrefreshed at
    `horizon` with no cap set.
    """
    source = _as_source(env_or_spec, seed, mode)
    d = source.d
    full = np.uint8((1 << d) - 1)
    start = np.asarray(start, dtype=np.int64)
    if start.ndim == 2:
        if start.shape != (n_trials, d):
            raise ConfigurationError("per-trial starts need shape (n_trials, d)")
    elif start.size != d:
        raise ConfigurationError("start has the wrong dimension")

    positions = (
        start.copy() if start.ndim == 2 else np.broadcast_to(start, (n_trials, d)).copy()
    )
    trial_ids = np.arange(trial_offset, trial_offset + n_trials, dtype=np.int64)
    seen = np.zeros(n_trials, dtype=np.uint8)
    durations = np.zeros(n_trials, dtype=np.int64)
    refreshed = np.zeros(n_trials, dtype=bool)
    track_time = np.full(n_trials, -2, dtype=np.int64) if track_axis is not None else None
    track_sign = np.zeros(n_trials, dtype=np.int8) if track_axis is not None else None
    final_positions = np.empty((n_trials, d), dtype=np.int64)

    active = np.arange(n_trials)
    walk_key = rng.key(seed, rng.LABEL_WALK)
    limit = horizon if cap is None else min(cap, horizon)
    step = 0
    one = np.uint8(1)
    while active.size:
        if step >= limit:
            if cap is None:
                raise HorizonError(
                    f"{active.size} of {n_trials} walks unrefreshed after {horizon} steps; "
                    "the environment may not be genuinely d-dimensional"
                )
            durations[active] = cap
            final_positions[active] = positions[active]
            break
        hw = source.half_weights(positions[active], trial_ids[active])
        axes, signs = _choose_moves(
            hw,
            _move_uniforms(walk_key, trial_ids[active], step, _AXIS_STREAM),
            _move_uniforms(walk_key, trial_ids[active], step, _SIGN_STREAM),
        )
        positions[active, axes] += signs
        if track_axis is not None:
            hit = (axes == track_axis) & (track_time[active] == -2)
            if hit.any():
                who = active[hit]
                track_time[who] = step + 1
                track_sign[who] = signs[hit]
        seen[active] |= one << axes.astype(np.uint8)
        done = seen[active] == full
        if done.any():
            finished = active[done]
            durations[finished] = step + 1
            refreshed[finished] = True
            final_positions[finished] = positions[finished]
            active = active[~done]
        step += 1
    return RefreshSampleResult(
        durations=durations,
        refreshed=refreshed,
        positions=final_positions,
        start=start,
        cap=cap,
        first_time=track_time,
        first_sign=track_sign,
    )


# -- estimators ----------------------------------------------------------------


def _jackknife_stderr_of_mean(values: np.ndarray) -> float:
    n = values.size
    if n < 2:
        return float("nan")
    total = values.sum(dtype=np.float64)
    loo = (total - values) / (n - 1)
    return float(np.sqrt((n - 1) / n * ((loo - loo.mean()) ** 2).sum()))


@dataclass
class SurvivalEstimate:
    grid: np.ndarray
    probabilities: np.ndarray
    stderrs: np.ndarray
    trials: int
    seed: int
    mode: str

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.tolist(),
            "probabilities": self.probabilities.tolist(),
            "stderrs": self.stderrs.tolist(),
            "trials": self.trials,
            "seed": self.seed,
            "mode": self.mode,
        }


def estimate_t1_survival(
    env_or_spec,
    start,
    grid,
    n_trials: int,
    seed: int,
    *,
    mode: str = "annealed",
) -> SurvivalEstimate:
    """Monte Carlo estimate of P(T_1 > n) on a grid of n values."""
    grid = np.asarray(sorted(int(n) for n in grid), dtype=np.int64)
    if grid.size == 0 or grid[0] < 0:
        raise ConfigurationError("survival grid must be non-empty and non-negative")
    cap = int(grid[-1]) + 1
    sample = sample_refresh(env_or_spec, start, n_trials, seed, cap=cap, mode=mode)
    # censoring at cap > max(grid) leaves every P(T_1 > n) on the grid exact
    exceed = sample.durations[None, :] > grid[:, None]
    probabilities = exceed.mean(axis=1)
    stderrs = np.sqrt(probabilities * (1 - probabilities) / n_trials)
    return SurvivalEstimate(grid, probabilities, stderrs, n_trials, int(seed), mode)


@dataclass
class MomentEstimate:
    estimate: float
    stderr: float
    power: int
    trials: int
    seed: int
    max_sample: int

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "stderr": self.stderr,
            "power": self.power,
            "trials": self.trials,
            "seed": self.seed,
            "max_sample": self.max_sample,
        }


def estimate_t1_moment(
    env_or_spec,
    start,
    power: int,
    n_trials: int,
    seed: int,
    *,
    mode: str = "quenched",
    horizon: int = DEFAULT_HORIZON,
) -> MomentEstimate:
    """Plug-in estimate of E[T_1^power] with jackknife standard error."""
    if power < 1:
        raise ConfigurationError("moment power must be >= 1")
    sample = sample_refresh(env_or_spec, start, n_trials, seed, mode=mode, horizon=horizon)
    values = sample.durations.astype(np.float64) ** power
    return MomentEstimate(
        estimate=float(values.mean()),
        stderr=_jackknife_stderr_of_mean(values),
        power=int(power),
        trials=int(n_trials),
        seed=int(seed),
        max_sample=int(sample.durations.max()),
    )
