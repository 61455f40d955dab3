"""Exact oracles for the reflected and time-rescaled kernels.

The uniform nearest-neighbor law admits closed forms for every quantity in
this module (geometric refresh tails, truncated moments, uniform stationary
weights), so most tests pin machine-precision constants rather than
statistical tolerances.
"""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rwre_lab import walk
from rwre_lab.env import EnvSpec, build_environment
from rwre_lab.errors import ConfigurationError, ResourceBudgetError
from rwre_lab.kernels import (
    DENSE_RESULT_BUDGET,
    MeasureOnBox,
    STATE_BUDGET,
    average_step_size,
    convert_to_original,
    density_norms,
    reflected_kernel,
    rescaled_kernel,
    rescaled_kernel_mc,
    stationary,
    stationary_residual,
    stopped_mean_displacement,
    support_bound_check,
)

# Truncating the uniform-law refresh time at cap=8 gives
#   E[T ^ 1]  = 1 + sum_{m=1}^{7} 2^{-(m-1)}
#   E[T^2 ^ 1] from the pmf {t: 2^{-(t-1)} for t=2..7, 8: 2^{-6}}
# both exact dyadic rationals.
T_MEAN_CAP8 = 2.984375
T_SECOND_CAP8 = 10.703125
SURVIVAL_CAP8 = 2.0 ** -7


def test_reflected_kernel_corner_row(srw_box):
    kern = reflected_kernel(srw_box)
    mat = kern.matrix.toarray()
    # corner (0,0): both negative moves fold back, so holding mass 1/2
    row = mat[0]
    assert row[0] == pytest.approx(0.5, abs=1e-15)
    assert row[np.ravel_multi_index((1, 0), (4, 4))] == pytest.approx(0.25, abs=1e-15)
    assert row[np.ravel_multi_index((0, 1), (4, 4))] == pytest.approx(0.25, abs=1e-15)
    # interior site (1,1) has no folding and no holding
    interior = mat[np.ravel_multi_index((1, 1), (4, 4))]
    assert interior[np.ravel_multi_index((1, 1), (4, 4))] == 0.0
    assert np.count_nonzero(interior) == 4


@given(seed=st.integers(0, 40), n_exp=st.sampled_from([4, 8]))
def test_reflected_kernel_rows_are_stochastic(seed, n_exp):
    env = build_environment(EnvSpec.random_direction(2), seed, (n_exp, n_exp))
    mat = reflected_kernel(env).matrix
    sums = np.asarray(mat.sum(axis=1)).ravel()
    assert np.max(np.abs(sums - 1.0)) < 1e-12
    assert mat.min() >= 0.0


def test_rescaled_kernel_cap2_exact(srw_box):
    chain = rescaled_kernel(srw_box, cap=2)
    assert np.all(chain.t_mean == 2.0)
    assert np.all(chain.t_second == 4.0)
    assert np.all(chain.survival == 0.5)
    sums = chain.y1.sum(axis=1)
    assert np.max(np.abs(sums - 1.0)) < 1e-12


def test_rescaled_kernel_truncated_moments(srw_spec):
    env = build_environment(srw_spec, 0, (16, 16))
    chain = rescaled_kernel(env, cap=8)
    assert np.max(np.abs(chain.t_mean - T_MEAN_CAP8)) < 1e-12
    assert np.max(np.abs(chain.t_second - T_SECOND_CAP8)) < 1e-12
    assert np.max(np.abs(chain.survival - SURVIVAL_CAP8)) < 1e-12


def test_stationary_uniform_for_translation_invariant_law(srw_spec):
    env = build_environment(srw_spec, 0, (4, 4))
    chain = rescaled_kernel(env, cap=2)
    measure = stationary(chain.kernel())
    assert np.max(np.abs(measure.weights - 1.0 / 16.0)) < 1e-12
    assert stationary_residual(measure, chain.kernel()) < 1e-12


def test_conversion_identity_machine_exact(srw_spec):
    """Total converted mass must equal the stationary average of E[T ^ cap]."""
    env = build_environment(srw_spec, 0, (16, 16))
    chain = rescaled_kernel(env, cap=8)
    holder = stationary(chain.kernel())
    conv = convert_to_original(holder, env, cap=8, chain=chain)
    expected = float(holder.weights @ chain.t_mean)
    assert conv.total_mass == pytest.approx(expected, abs=1e-12)
    assert conv.residual < 1e-12
    # uniform case: the normalized converted measure is itself uniform
    assert conv.measure.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.max(np.abs(conv.measure.weights - 1.0 / 256.0)) < 1e-12


def test_conversion_on_generic_environment(rd_spec):
    env = build_environment(rd_spec, 5, (32, 32))
    chain = rescaled_kernel(env, cap=16)
    holder = stationary(chain.kernel())
    assert stationary_residual(holder, chain.kernel()) < 1e-10
    conv = convert_to_original(holder, env, cap=16, chain=chain)
    assert conv.residual < 1e-8
    assert conv.total_mass == pytest.approx(float(holder.weights @ chain.t_mean), abs=1e-10)


def test_conversion_rejects_monte_carlo_chain(srw_spec):
    env = build_environment(srw_spec, 0, (8, 8))
    chain = rescaled_kernel_mc(env, cap=4, n_samples=200, seed=9)
    holder = stationary(rescaled_kernel(env, cap=4).kernel())
    with pytest.raises(ConfigurationError):
        convert_to_original(holder, env, cap=4, chain=chain)


def test_conversion_rejects_cap_mismatch(srw_spec):
    env = build_environment(srw_spec, 0, (8, 8))
    chain = rescaled_kernel(env, cap=4)
    holder = stationary(chain.kernel())
    with pytest.raises(ConfigurationError):
        convert_to_original(holder, env, cap=5, chain=chain)


def test_average_step_size_oracle(srw_spec):
    env = build_environment(srw_spec, 0, (16, 16))
    chain = rescaled_kernel(env, cap=8)
    holder = stationary(chain.kernel())
    o_n = average_step_size(holder, chain)
    assert o_n == pytest.approx(np.sqrt(T_SECOND_CAP8), abs=1e-12)


def test_stopped_mean_displacement_vanishes(rd_spec):
    """Balance makes every coordinate a martingale, so the stopped mean is zero."""
    env = build_environment(rd_spec, 7, "procedural")
    disp = stopped_mean_displacement(env, (3, -2), cap=6)
    assert np.max(np.abs(disp)) < 1e-12


def test_density_norms_and_support_bound(rd_spec):
    env = build_environment(rd_spec, 5, (16, 16))
    chain = rescaled_kernel(env, cap=8)
    holder = stationary(chain.kernel())
    norms = density_norms(holder, [1.0, 2.0])
    assert norms[1.0] == pytest.approx(1.0, abs=1e-12)
    report = support_bound_check(holder)
    assert report.holds
    assert 0.0 < report.support_fraction <= 1.0


def test_support_bound_point_mass_extremal():
    # point mass on S states: ||f||_{p'} = S^{1-1/p'} and the bound is tight
    S = 64
    weights = np.zeros(S)
    weights[5] = 1.0
    measure = MeasureOnBox(weights, N=8, d=2, class_states=np.arange(S))
    assert measure.norm(2.0) == pytest.approx(S ** 0.5, abs=1e-12)
    report = support_bound_check(measure, p_prime=2.0)
    assert report.holds
    assert report.support_fraction == pytest.approx(1.0 / S)
    assert report.bound == pytest.approx(report.support_fraction, abs=1e-15)


def test_rescaled_kernel_mc_agrees_with_exact(srw_spec):
    env = build_environment(srw_spec, 0, (4, 4))
    exact = rescaled_kernel(env, cap=4)
    mc = rescaled_kernel_mc(env, cap=4, n_samples=3000, seed=2)
    assert mc.monte_carlo and not exact.monte_carlo
    # 3000 samples per state puts the t_mean error well inside 0.1
    assert np.max(np.abs(mc.t_mean - exact.t_mean)) < 0.1
    assert np.max(np.abs(mc.y1.sum(axis=1) - 1.0)) < 1e-9


def test_state_budget_guard(srw_spec):
    env = build_environment(srw_spec, 0, (64, 64))
    cap_needed = int(STATE_BUDGET // (64 * 64 * 4)) + 1
    with pytest.raises(ResourceBudgetError):
        rescaled_kernel(env, cap=cap_needed)


def test_dense_result_budget_guard(srw_spec):
    n_side = int(np.ceil(np.sqrt(DENSE_RESULT_BUDGET))) // 64 * 64 + 64
    # states = n_side^2 per axis pair, so the dense Y_1 law would exceed the budget
    env = build_environment(srw_spec, 0, (n_side, n_side))
    with pytest.raises(ResourceBudgetError):
        rescaled_kernel(env, cap=1)


def test_walk_moments_match_kernel_truncation(srw_spec):
    """sample_refresh with a cap must reproduce the kernel's truncated mean."""
    env = build_environment(srw_spec, 0, (16, 16))
    res = walk.sample_refresh(env, (8, 8), n_trials=20000, horizon=100, seed=4, cap=8)
    est = res.durations.mean()
    se = res.durations.std(ddof=1) / np.sqrt(res.durations.size)
    assert abs(est - T_MEAN_CAP8) < 4.0 * se + 1e-9
