"""Sink decomposition of the folded one-step digraph.

The hand case is a 4x4 box whose even rows only move horizontally and whose
odd rows only move vertically: the even rows are closed corridors (the
sinks) and every odd-row site is transient.
"""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rwre_lab import sinks
from rwre_lab.env import BoxedEnvironment, EnvSpec, build_environment
from rwre_lab.kernels import MeasureOnBox, reflected_kernel, stationary, stationary_residual


@pytest.fixture(scope="module")
def corridor_env():
    table = np.zeros((4, 4, 2))
    table[:, 0, :] = (0.5, 0.0)
    table[:, 2, :] = (0.5, 0.0)
    table[:, 1, :] = (0.0, 0.5)
    table[:, 3, :] = (0.0, 0.5)
    return BoxedEnvironment(table)


def test_corridor_decomposition(corridor_env):
    dec = sinks.scc_decompose(sinks.build_digraph(corridor_env))
    assert int(dec.is_sink.sum()) == 2
    sizes = sorted(len(dec.components[i]) for i in np.flatnonzero(dec.is_sink))
    assert sizes == [4, 4]
    report = sinks.uniqueness_diagnostic(corridor_env)
    assert report.n_sinks == 2
    assert report.min_sink_distance == 2.0
    assert sorted(report.sink_sizes) == [4, 4]
    assert report.non_sink_scc_sizes == [1] * 8


def test_unfolded_digraph_drops_boundary_exits(corridor_env):
    folded = sinks.build_digraph(corridor_env)
    unfolded = sinks.build_digraph(corridor_env, folded=False)
    # every site keeps exactly two positive directions once folded
    assert folded.edge_ok.mean() == pytest.approx(0.5)
    assert unfolded.edge_ok.mean() < folded.edge_ok.mean()


def test_scc_hand_adjacency():
    adj = np.array([[0, 1, 0], [1, 0, 0], [1, 0, 0]])
    comps = sinks.strongly_connected_components(adj)
    assert sorted(sorted(c.tolist()) for c in comps) == [[0, 1], [2]]


@given(seed=st.integers(0, 30))
def test_scc_matches_brute_force(seed):
    env = build_environment(EnvSpec.random_direction(2), seed, (8, 8))
    graph = sinks.build_digraph(env)
    fast = sinks.scc_decompose(graph)
    slow = sinks.brute_force_components(graph)
    assert sinks.same_decomposition(fast, slow)


def test_per_sink_stationary_supports(corridor_env):
    kernel = reflected_kernel(corridor_env)
    dec = sinks.scc_decompose(sinks.build_digraph(corridor_env))
    for idx in np.flatnonzero(dec.is_sink):
        measure = stationary(kernel, class_states=dec.components[idx])
        assert stationary_residual(measure, kernel) < 1e-10
        report = sinks.support_vs_sinks(measure, dec)
        assert report.support_inside_sinks
        assert report.closure_ok
        assert report.support_size == 4


def test_support_outside_sinks_is_flagged(corridor_env):
    dec = sinks.scc_decompose(sinks.build_digraph(corridor_env))
    # full support covers transient states but has no leaking edges
    uniform = MeasureOnBox(np.full(16, 1.0 / 16.0), N=4, d=2, class_states=np.arange(16))
    report = sinks.support_vs_sinks(uniform, dec)
    assert not report.support_inside_sinks
    assert report.closure_ok
    # a point mass on a transient site leaks through both its out-edges
    point = np.zeros(16)
    point[np.ravel_multi_index((0, 1), (4, 4))] = 1.0
    report = sinks.support_vs_sinks(MeasureOnBox(point, N=4, d=2, class_states=np.arange(16)), dec)
    assert not report.support_inside_sinks
    assert not report.closure_ok
    assert len(report.violations) == 2


def test_absorption_within_horizon():
    env = build_environment(EnvSpec.random_direction(2), 3, (16, 16))
    cells = np.stack(np.meshgrid(np.arange(16), np.arange(16), indexing="ij"), axis=-1).reshape(-1, 2)
    report = sinks.absorption_experiment(env, cells, horizon=10**5, trials=4, seed=11)
    assert report.fraction_absorbed == 1.0
    assert report.max_observed_time < 10**5
