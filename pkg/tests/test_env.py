import numpy as np
import pytest
from hypothesis import given, strategies as st

from rwre_lab import rng
from rwre_lab.env import (
    BoxedEnvironment,
    EnvSpec,
    LocalLaw,
    PeriodizedEnvironment,
    ProceduralEnvironment,
    build_environment,
    build_noclt_environment,
    fold_point,
    load_environment,
    normalize_half_weights,
    sample_laws,
    save_environment,
    validate_environment,
)
from rwre_lab.errors import ConfigurationError


def test_fold_point_hand_values():
    got = fold_point(np.array([-2, -1, 0, 1, 2, 3, 4, 5]), 2)
    assert np.array_equal(got, [1, 0, 0, 1, 1, 0, 0, 1])


@given(x=st.integers(-10**9, 10**9), N=st.integers(1, 64))
def test_fold_point_properties(x, N):
    g = int(fold_point(np.array([x]), N)[0])
    assert 0 <= g < N
    # period 2N, mirror symmetry across -1/2, and a fixed point on [0, N)
    assert int(fold_point(np.array([x + 2 * N]), N)[0]) == g
    assert int(fold_point(np.array([-1 - x]), N)[0]) == g
    assert int(fold_point(np.array([g]), N)[0]) == g


def test_fold_point_rejects_bad_box():
    with pytest.raises(ConfigurationError):
        fold_point(np.array([0]), 0)


def test_normalize_half_weights():
    out = normalize_half_weights((0.25, 0.25))
    assert np.allclose(out, [0.25, 0.25])
    with pytest.raises(ConfigurationError):
        normalize_half_weights((-0.1, 0.6))
    with pytest.raises(ConfigurationError):
        normalize_half_weights((0.0, 0.0))


def test_local_law_full_law_balance():
    law = LocalLaw((0.3, 0.2))
    full = law.full_law()
    assert full.shape == (4,)
    assert full.sum() == pytest.approx(1.0, abs=1e-15)
    assert full[0] == full[1] == 0.3


@given(
    seed=st.integers(0, 2**32),
    variant=st.sampled_from(["srw", "rd", "dirichlet"]),
)
def test_sampled_laws_are_balanced_and_reproducible(seed, variant):
    spec = {
        "srw": EnvSpec.uniform_srw(2),
        "rd": EnvSpec.random_direction(2),
        "dirichlet": EnvSpec.elliptic_dirichlet((0.7, 1.3)),
    }[variant]
    sites = np.array([[0, 0], [5, -3], [-1, 9]])
    a = sample_laws(spec, seed, sites)
    b = sample_laws(spec, seed, sites)
    assert np.array_equal(a, b)
    assert np.all(a >= 0)
    assert np.max(np.abs(2.0 * a.sum(axis=-1) - 1.0)) < 1e-12


def test_boxed_matches_procedural(rd_spec):
    boxed = build_environment(rd_spec, 11, (6, 6))
    proc = ProceduralEnvironment(rd_spec, seed=11)
    pts = np.stack(np.meshgrid(np.arange(6), np.arange(6), indexing="ij"), axis=-1).reshape(-1, 2)
    assert np.array_equal(boxed.half_weights_at(pts), proc.half_weights_at(pts))


def test_periodized_agrees_with_fold(rd_spec):
    base = build_environment(rd_spec, 4, (8, 8))
    wrapped = PeriodizedEnvironment(base)
    pts = np.array([[-5, 3], [17, -2], [800, 801], [-8, -8]])
    folded = np.stack([fold_point(pts[:, 0], 8), fold_point(pts[:, 1], 8)], axis=-1)
    assert np.array_equal(wrapped.half_weights_at(pts), base.half_weights_at(folded))


def test_validate_environment_flags_degenerate_axis():
    table = np.zeros((4, 4, 2))
    table[..., 0] = 0.5
    report = validate_environment(BoxedEnvironment(table))
    assert report.balanced
    assert not report.genuinely_d_dimensional
    assert not report.ok
    assert report.axis_positive_fraction[1] == 0.0


def test_validate_environment_ok(rd_box_16):
    report = validate_environment(rd_box_16)
    assert report.ok
    assert report.worst_balance_defect < 1e-12


def test_single_axis_mixture_rejected():
    with pytest.raises(ConfigurationError):
        EnvSpec.finite_mixture(((LocalLaw((0.5, 0.0)), 1.0),)).validate()


def test_spec_dict_round_trips():
    specs = [
        EnvSpec.uniform_srw(3),
        EnvSpec.random_direction(2),
        EnvSpec.elliptic_dirichlet((0.5, 1.5)),
        EnvSpec.finite_mixture(((LocalLaw((0.4, 0.1)), 0.5), (LocalLaw((0.1, 0.4)), 0.5))),
        EnvSpec.noclt_2d(4),
    ]
    for spec in specs:
        assert EnvSpec.from_dict(spec.to_dict()) == spec


def test_spec_from_dict_rejects_malformed():
    with pytest.raises(ConfigurationError):
        EnvSpec.from_dict({"variant": "uniform-srw"})
    with pytest.raises(ConfigurationError):
        EnvSpec.from_dict({"variant": "no-such-variant", "d": 2})


def test_save_load_round_trip(tmp_path, rd_spec):
    env = build_environment(rd_spec, 13, (5, 7))
    path = tmp_path / "env.json"
    save_environment(env, path)
    back = load_environment(path)
    assert np.array_equal(back.table, env.table)
    assert back.spec == env.spec
    assert back.seed == env.seed


def _brute_force_noclt_table(seed: int, n_max: int, shape):
    """Site-by-site reimplementation of the marker construction.

    Walks every claim level with explicit loops over the run of cells a
    marker would have to occupy, instead of the vectorized window scan.
    """
    W, H = shape

    def marked(n, orientation, x, y):
        base = rng.key(seed, rng.LABEL_MARKER, n, orientation)
        return bool(rng.u01(rng.key_mixin(base, np.array(x), np.array(y)), 0) < 3.0 ** (-n))

    claims = []
    for n in range(1, n_max + 1):
        claims.append((1.0 - np.exp(-2.0 * n), 1, n))
        claims.append((1.0 - np.exp(-(2.0 * n + 1.0)), 0, n))
    claims.sort(key=lambda c: (c[0], c[1]))

    table = np.full((W, H, 2), 0.25)
    for x in range(W):
        for y in range(H):
            for value, orientation, n in claims:
                run = 2**n
                if orientation == 1:
                    hit = any(marked(n, 1, x, y - j) for j in range(1, run + 1))
                else:
                    hit = any(marked(n, 0, x - j, y) for j in range(1, run + 1))
                if hit:
                    dominant = 1 if orientation == 1 else 0
                    table[x, y, dominant] = value / 2.0
                    table[x, y, 1 - dominant] = (1.0 - value) / 2.0
    return table


@pytest.mark.parametrize("seed", [0, 5])
def test_noclt_table_matches_brute_force(seed):
    shape = (12, 10)
    env = build_noclt_environment(seed, 3, shape)
    assert np.array_equal(env.table, _brute_force_noclt_table(seed, 3, shape))


def test_noclt_environment_is_elliptic_and_balanced():
    n_max = 6
    env = build_noclt_environment(1, n_max, (40, 40))
    report = validate_environment(env)
    assert report.ok
    floor = np.exp(-(2.0 * n_max + 1.0)) / 2.0
    assert env.table.min() >= floor - 1e-15


def test_build_environment_noclt_routing():
    via_spec = build_environment(EnvSpec.noclt_2d(2), 7, (9, 9))
    direct = build_noclt_environment(7, 2, (9, 9))
    assert np.array_equal(via_spec.table, direct.table)
