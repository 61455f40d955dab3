import numpy as np
import pytest
from hypothesis import given, strategies as st

from rwre_lab import walk
from rwre_lab.env import BoxedEnvironment, EnvSpec, PeriodizedEnvironment, ProceduralEnvironment
from rwre_lab.errors import ConfigurationError, HorizonError


@pytest.fixture(scope="module")
def srw_env():
    return ProceduralEnvironment(EnvSpec.uniform_srw(2), seed=1)


def _traj(axes, signs=None, d=2):
    axes = np.asarray(axes, dtype=np.int8)
    if signs is None:
        signs = np.ones_like(axes)
    return walk.Trajectory(np.zeros(d, dtype=np.int64), axes, np.asarray(signs, dtype=np.int8))


def test_refresh_times_hand_case():
    rt = walk.refresh_times(_traj([0, 1, 0, 0, 1, 1]))
    assert np.array_equal(rt.times, [0, 2, 5])
    assert np.array_equal(rt.gaps, [2, 3])


def test_refresh_times_cap_truncates_segments():
    rt = walk.refresh_times(_traj([0, 1, 0, 0, 1, 1]), cap=2)
    assert np.array_equal(rt.times, [0, 2, 4, 6])
    assert np.array_equal(rt.gaps, [2, 2, 2])
    with pytest.raises(ConfigurationError):
        walk.refresh_times(_traj([0, 1]), cap=0)


def _brute_refresh(axes, d, cap=None):
    times = [0]
    seen = set()
    start = 0
    for n, a in enumerate(axes, start=1):
        seen.add(int(a))
        if len(seen) == d:
            times.append(n)
            seen.clear()
            start = n
        elif cap is not None and n - start == cap:
            times.append(n)
            seen.clear()
            start = n
    return times


@given(
    axes=st.lists(st.integers(0, 1), min_size=1, max_size=80),
    cap=st.one_of(st.none(), st.integers(1, 6)),
)
def test_refresh_times_matches_set_scan(axes, cap):
    rt = walk.refresh_times(_traj(axes), cap=cap)
    assert rt.times.tolist() == _brute_refresh(axes, 2, cap)


@given(
    axes=st.lists(st.integers(0, 1), min_size=1, max_size=60),
    flips=st.lists(st.sampled_from([-1, 1]), min_size=60, max_size=60),
)
def test_refresh_times_ignore_signs(axes, flips):
    base = walk.refresh_times(_traj(axes))
    flipped = walk.refresh_times(_traj(axes, signs=flips[: len(axes)]))
    assert np.array_equal(base.times, flipped.times)


def test_t1_mean_matches_geometric_tail(srw_env):
    est = walk.estimate_t1_moment(srw_env, (0, 0), 1, 20000, seed=2)
    assert abs(est.estimate - 3.0) < 4.0 * est.stderr
    assert est.stderr < 0.05


def test_t1_survival_matches_geometric_tail(srw_env):
    grid = [1, 2, 4, 6]
    est = walk.estimate_t1_survival(srw_env, (0, 0), grid, 20000, seed=7, mode="quenched")
    # the two axes decouple: P(T > m) = 2^(1-m) for m >= 1
    expected = np.array([1.0, 0.5, 0.125, 0.03125])
    err = np.abs(est.probabilities - expected)
    assert np.all(err <= 4.0 * est.stderrs + 1e-12)


def test_sample_refresh_cap_flag_consistency(srw_env):
    res = walk.sample_refresh(srw_env, (0, 0), n_trials=500, horizon=50, seed=4, cap=8)
    assert np.all(res.durations >= 2)
    assert np.all(res.durations <= 8)
    assert np.all(res.durations[~res.refreshed] == 8)
    # each trial ends within duration steps of its start in sup norm
    sup = np.abs(res.positions - np.zeros(2, dtype=np.int64)).max(axis=1)
    assert np.all(sup <= res.durations)


def test_sample_refresh_per_trial_starts(srw_env):
    """Translation invariance: the refresh law does not depend on the start."""
    n = 64
    single = walk.sample_refresh(srw_env, (0, 0), n_trials=n, horizon=200, seed=9, cap=10)
    starts = np.zeros((n, 2), dtype=np.int64)
    spread = walk.sample_refresh(srw_env, starts, n_trials=n, horizon=200, seed=9, cap=10)
    assert np.array_equal(single.durations, spread.durations)
    with pytest.raises(ConfigurationError):
        walk.sample_refresh(srw_env, np.zeros((n + 1, 2), dtype=np.int64), n_trials=n, horizon=50, seed=9)


def test_sample_refresh_horizon_error_on_dead_axis():
    table = np.zeros((4, 4, 2))
    table[..., 0] = 0.5
    env = PeriodizedEnvironment(BoxedEnvironment(table))
    with pytest.raises(HorizonError):
        walk.sample_refresh(env, (1, 1), n_trials=4, horizon=50, seed=5)
    res = walk.sample_refresh(env, (1, 1), n_trials=4, horizon=50, seed=5, cap=10)
    assert not res.refreshed.any()


def test_ensemble_moves_reconstruct_finals(srw_env):
    res = walk.simulate_ensemble(srw_env, (3, -2), 16, 40, seed=11, keep_moves=True, checkpoint_times=(20, 40))
    disp = np.zeros((16, 2), dtype=np.int64)
    for axis in range(2):
        disp[:, axis] = np.where(res.axes == axis, res.signs, 0).sum(axis=1)
    assert np.array_equal(res.final_positions, np.array([3, -2]) + disp)
    assert np.array_equal(res.checkpoints[40], res.final_positions)
    assert res.checkpoints[20].shape == (16, 2)


def test_single_trajectory_csv_round_trip(tmp_path, srw_env):
    traj = walk.simulate(srw_env, (2, -1), 25, seed=3)
    path = tmp_path / "traj.csv"
    traj.to_csv(path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "n,axis,sign,x_1,x_2"
    # header, the n=0 start row, then one row per step
    assert len(lines) == 27
    assert lines[1].startswith("0,,")
    last = lines[-1].split(",")
    assert [int(last[3]), int(last[4])] == traj.positions()[-1].tolist()


def test_gap_scan_matches_per_row_refresh(srw_env):
    res = walk.simulate_ensemble(srw_env, (0, 0), 8, 60, seed=13, keep_moves=True)
    ids, _, lengths = walk.refresh_gap_scan(res.axes, 2)
    for row in range(8):
        rt = walk.refresh_times(walk.Trajectory(res.start, res.axes[row], res.signs[row]))
        assert np.array_equal(lengths[ids == row], rt.gaps)


def test_bulk_gap_mean_near_exact_value(srw_env):
    res = walk.simulate_ensemble(srw_env, (0, 0), 400, 300, seed=17, keep_moves=True)
    mean, count = walk.bulk_gap_mean(res.axes, 2)
    assert count > 10000
    assert abs(mean - 3.0) < 0.15
