"""Acceptance gate: one test per criterion, run at the pinned master seed.

Each test re-states its numeric gate on the record the criterion returns,
so the tolerance in force is visible at the assertion site. The heavy
simulations run inside the criterion functions; everything here is pinned
to ACCEPTANCE_SEED and deterministic.
"""

import numpy as np

from rwre_lab import acceptance

SEED = acceptance.ACCEPTANCE_SEED


def test_criterion_1_srw_covariance_control():
    rec = acceptance.criterion_1(SEED)
    m = np.asarray(rec["matrix"])
    assert np.all(np.abs(np.diag(m) - 0.5) <= 0.02), m
    assert np.all(np.abs(m[~np.eye(2, dtype=bool)]) < 0.02), m
    assert abs(rec["trace"] - 1.0) <= 0.02, rec["trace"]
    assert rec["passed"]


def test_criterion_2_quenched_clt_over_environments():
    rec = acceptance.criterion_2(SEED)
    assert rec["n_environments"] == 20
    for env_rec in rec["environments"]:
        assert min(env_rec["ks_pvalues_final"]) > 0.001, env_rec
        assert env_rec["off_ok"] and env_rec["diag_ok"], env_rec
    assert rec["n_failed"] == 0
    assert rec["passed"]


def test_criterion_3_refresh_moments():
    rec = acceptance.criterion_3(SEED)
    assert abs(rec["first_moment"] - 3.0) <= 0.02, rec["first_moment"]
    assert abs(rec["second_moment"] - 11.0) <= 0.2, rec["second_moment"]
    assert rec["passed"]


def test_criterion_4_stationary_pipeline():
    rec = acceptance.criterion_4(SEED)
    assert rec["n_instances"] == 60
    assert rec["n_failed"] == 0
    med = rec["median_norms"]
    assert med["32"] <= 2.0 * med["8"], med
    assert rec["passed"]


def test_criterion_5_max_principle_sweep():
    rec = acceptance.criterion_5(SEED)
    assert rec["n_instances"] == 200
    assert rec["n_gated"] > 0
    assert rec["n_violations"] == 0, rec["violations"]
    assert rec["passed"]


def test_criterion_6_mean_value_stability():
    rec = acceptance.criterion_6(SEED)
    assert rec["n_solves"] == 50
    assert rec["residual_ok"] and rec["finite_ok"]
    assert rec["max_ratio"] <= 10.0 * rec["median_ratio"], rec
    assert rec["passed"]


def test_criterion_7_sinks_and_absorption():
    rec = acceptance.criterion_7(SEED)
    assert rec["n_seeds"] == 50
    for seed_rec in rec["seeds"]:
        assert seed_rec["fraction_absorbed"] == 1.0, seed_rec
    assert rec["n_failed"] == 0
    assert rec["passed"]


def test_criterion_8_conditional_displacement():
    rec = acceptance.criterion_8(SEED)
    assert len(rec["cases"]) == 4
    for case in rec["cases"]:
        axis = case["axis"]
        assert abs(case["estimate"][axis] - 1.0) <= 0.05, case
        off = 1 - axis
        assert abs(case["estimate"][off]) <= 3.0 * case["stderr"][off], case
    assert rec["passed"]


def test_criterion_9_single_axis_epochs():
    rec = acceptance.criterion_9(SEED)
    comp = rec["comparison"]
    assert comp["binomial_pvalue"] < 0.01, comp
    assert comp["test_rate"] > comp["baseline_rate"], comp
    assert rec["passed"]
