"""Directed-graph structure of environments: components, sinks, absorption.

A site points to every fold-or-identity neighbor it can actually reach in
one step. Sinks are strongly connected components with no edge leaving, so
they are computed on the folded cube where the dynamics are closed. The
brute-force reachability classifier is kept alongside the sparse SCC path
as an independent oracle for small instances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components as _cs_components

from .env import BoxedEnvironment, Environment, PeriodizedEnvironment
from .errors import ConfigurationError
from .kernels import fold_neighbor_table
from .rng import LABEL_WALK, key
from .walk import _as_source, _choose_moves, _move_uniforms


@dataclass
class Digraph:
    """Positive-probability one-step adjacency over a finite box.

    targets[s, 2*a + j] is the node reached from s along +e_a (j=0) or -e_a
    (j=1); edge_ok masks moves with positive weight (and, in unfolded mode,
    moves that stay inside the box). Nodes are row-major cells.
    """

    targets: np.ndarray
    edge_ok: np.ndarray
    shape: tuple
    d: int
    folded: bool

    @property
    def n_nodes(self) -> int:
        return self.targets.shape[0]

    def adjacency(self) -> list[np.ndarray]:
        return [self.targets[s][self.edge_ok[s]] for s in range(self.n_nodes)]

    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        mask = self.edge_ok.ravel()
        rows = np.repeat(np.arange(self.n_nodes), 2 * self.d)[mask]
        cols = self.targets.ravel()[mask]
        return rows, cols

    def sparse(self) -> sp.csr_matrix:
        rows, cols = self.edge_arrays()
        data = np.ones(rows.size, dtype=bool)
        return sp.csr_matrix((data, (rows, cols)), shape=(self.n_nodes, self.n_nodes))


def build_digraph(environment: Environment, domain=None, folded: bool = True) -> Digraph:
    """Adjacency of the walk on a box, folded (closed dynamics) or not."""
    if isinstance(environment, PeriodizedEnvironment):
        environment = environment.base
    if not isinstance(environment, BoxedEnvironment):
        raise ConfigurationError("digraphs need a boxed environment")
    shape = environment.shape if domain is None else tuple(int(s) for s in domain)
    if folded and len(set(shape)) != 1:
        raise ConfigurationError("folded digraphs need a cubic box")
    d = environment.d
    S = int(np.prod(shape))
    hw = environment.table.reshape(S, d)
    positive = np.repeat(hw > 0.0, 2, axis=1)
    if folded:
        targets = fold_neighbor_table(shape[0], d)
        edge_ok = positive
    else:
        coords = np.stack(np.meshgrid(*[np.arange(s) for s in shape], indexing="ij"), axis=-1)
        coords = coords.reshape(-1, d)
        targets = np.full((S, 2 * d), -1, dtype=np.int64)
        inside = np.zeros((S, 2 * d), dtype=bool)
        for a in range(d):
            for j, sign in enumerate((1, -1)):
                moved = coords.copy()
                moved[:, a] += sign
                ok = (moved[:, a] >= 0) & (moved[:, a] < shape[a])
                col = 2 * a + j
                inside[:, col] = ok
                targets[ok, col] = np.ravel_multi_index(tuple(moved[ok].T), shape)
        edge_ok = positive & inside
    return Digraph(targets=targets, edge_ok=edge_ok, shape=shape, d=d, folded=folded)


def strongly_connected_components(graph_or_adjacency) -> list[np.ndarray]:
    """Strongly connected components, ordered by their minimal node.

    Accepts a Digraph, a sparse boolean matrix, or an adjacency list.
    Each component comes back as a sorted node array.
    """
    if isinstance(graph_or_adjacency, Digraph):
        matrix = graph_or_adjacency.sparse()
    elif sp.issparse(graph_or_adjacency):
        matrix = graph_or_adjacency.tocsr()
    else:
        adjacency = graph_or_adjacency
        n = len(adjacency)
        rows = np.concatenate(
            [np.full(len(nbrs), i, dtype=np.int64) for i, nbrs in enumerate(adjacency)]
        ) if n else np.empty(0, dtype=np.int64)
        cols = np.concatenate(
            [np.asarray(nbrs, dtype=np.int64) for nbrs in adjacency]
        ) if n else np.empty(0, dtype=np.int64)
        matrix = sp.csr_matrix((np.ones(rows.size, dtype=bool), (rows, cols)), shape=(n, n))
    n = matrix.shape[0]
    _, labels = _cs_components(matrix, directed=True, connection="strong")
    order = np.argsort(labels, kind="stable")
    splits = np.flatnonzero(np.diff(labels[order])) + 1
    components = [np.sort(chunk) for chunk in np.split(order, splits)]
    components.sort(key=lambda c: int(c[0]))
    return components


@dataclass
class SinkDecomposition:
    """Partition into strongly connected components with sink flags."""

    components: list
    component_of: np.ndarray
    is_sink: np.ndarray
    densities: np.ndarray
    graph: Digraph

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def sink_ids(self) -> np.ndarray:
        return np.flatnonzero(self.is_sink)

    def sink_nodes(self) -> np.ndarray:
        if not self.sink_ids.size:
            return np.empty(0, dtype=np.int64)
        return np.concatenate([self.components[i] for i in self.sink_ids])

    def records(self) -> list[dict]:
        return [
            {
                "id": int(i),
                "size": int(len(self.components[i])),
                "is_sink": bool(self.is_sink[i]),
                "density": float(self.densities[i]),
                "min_node": int(self.components[i][0]),
            }
            for i in range(self.n_components)
        ]


def scc_decompose(graph: Digraph) -> SinkDecomposition:
    components = strongly_connected_components(graph)
    n = graph.n_nodes
    component_of = np.empty(n, dtype=np.int64)
    for ci, comp in enumerate(components):
        component_of[comp] = ci
    rows, cols = graph.edge_arrays()
    cross = component_of[rows] != component_of[cols]
    is_sink = np.ones(len(components), dtype=bool)
    is_sink[component_of[rows[cross]]] = False
    densities = np.array([len(c) / n for c in components])
    return SinkDecomposition(components, component_of, is_sink, densities, graph)


def brute_force_components(graph: Digraph) -> SinkDecomposition:
    """Reachability-closure classifier, quadratic memory; the oracle path."""
    n = graph.n_nodes
    if n > 4096:
        raise ConfigurationError("brute-force classification is for small graphs")
    reach = np.eye(n, dtype=bool)
    rows, cols = graph.edge_arrays()
    reach[rows, cols] = True
    while True:
        nxt = reach @ reach
        if (nxt == reach).all():
            break
        reach = nxt
    mutual = reach & reach.T
    component_of = np.full(n, -1, dtype=np.int64)
    components = []
    for node in range(n):
        if component_of[node] >= 0:
            continue
        members = np.flatnonzero(mutual[node])
        component_of[members] = len(components)
        components.append(members.astype(np.int64))
    is_sink = np.array(
        [bool((reach[comp[0]].sum() == len(comp))) for comp in components]
    )
    densities = np.array([len(c) / n for c in components])
    return SinkDecomposition(components, component_of, is_sink, densities, graph)


def same_decomposition(a: SinkDecomposition, b: SinkDecomposition) -> bool:
    if a.n_components != b.n_components:
        return False
    key_a = {tuple(c.tolist()): bool(a.is_sink[i]) for i, c in enumerate(a.components)}
    key_b = {tuple(c.tolist()): bool(b.is_sink[i]) for i, c in enumerate(b.components)}
    return key_a == key_b


@dataclass
class SupportReport:
    support_inside_sinks: bool
    closure_ok: bool
    violations: list
    support_size: int


def support_vs_sinks(measure, decomposition: SinkDecomposition) -> SupportReport:
    """Edge-closure and sink-membership of a measure's support."""
    graph = decomposition.graph
    if measure.n_states != graph.n_nodes:
        raise ConfigurationError("measure and decomposition node sets differ")
    support = measure.support()
    in_support = np.zeros(graph.n_nodes, dtype=bool)
    in_support[support] = True
    rows, cols = graph.edge_arrays()
    leaking = in_support[rows] & ~in_support[cols]
    violations = [(int(r), int(c)) for r, c in zip(rows[leaking][:20], cols[leaking][:20])]
    inside = bool(np.all(decomposition.is_sink[decomposition.component_of[support]]))
    return SupportReport(
        support_inside_sinks=inside,
        closure_ok=not bool(leaking.any()),
        violations=violations,
        support_size=int(support.size),
    )


@dataclass
class AbsorptionReport:
    fraction_absorbed: float
    quantiles: dict
    n_walks: int
    horizon: int
    max_observed_time: int


def absorption_experiment(
    environment: Environment,
    starts,
    horizon: int,
    trials: int,
    seed: int,
    decomposition: SinkDecomposition | None = None,
) -> AbsorptionReport:
    """Monte Carlo fraction of walks sitting inside a sink by the horizon.

    Walks run in the periodized environment and their folded position is
    classified each step; once inside a sink a walk can never leave, so the
    first entrance time is the absorption time.
    """
    if isinstance(environment, PeriodizedEnvironment):
        base = environment.base
    elif isinstance(environment, BoxedEnvironment):
        base = environment
    else:
        raise ConfigurationError("absorption runs on a boxed environment")
    if decomposition is None:
        decomposition = scc_decompose(build_digraph(base, folded=True))
    N = base.shape[0]
    d = base.d
    shape = (N,) * d
    sink_state = decomposition.is_sink[decomposition.component_of]

    starts = np.atleast_2d(np.asarray(starts, dtype=np.int64))
    n_walks = starts.shape[0] * trials
    positions = np.repeat(starts, trials, axis=0)
    trial_ids = np.arange(n_walks, dtype=np.int64)
    source = _as_source(PeriodizedEnvironment(base), seed, "quenched")
    walk_key = key(seed, LABEL_WALK)

    def fold_states(pos):
        r = np.mod(pos, 2 * N)
        folded = np.minimum(r, 2 * N - 1 - r)
        return np.ravel_multi_index(tuple(folded.T), shape)

    absorbed_at = np.full(n_walks, -1, dtype=np.int64)
    hit = sink_state[fold_states(positions)]
    absorbed_at[hit] = 0
    alive = np.flatnonzero(~hit)
    step = 0
    while alive.size and step < horizon:
        hw = source.half_weights(positions[alive], trial_ids[alive])
        u_axis = _move_uniforms(walk_key, trial_ids[alive], step, 0)
        u_sign = _move_uniforms(walk_key, trial_ids[alive], step, 1)
        axes, signs = _choose_moves(hw, u_axis, u_sign)
        positions[alive, axes] += signs
        step += 1
        hit = sink_state[fold_states(positions[alive])]
        if hit.any():
            absorbed_at[alive[hit]] = step
            alive = alive[~hit]
    done = absorbed_at >= 0
    fraction = float(done.mean())
    quantiles = {}
    if done.any():
        times = absorbed_at[done]
        for q in (0.5, 0.9, 0.99):
            quantiles[str(q)] = float(np.quantile(times, q))
        quantiles["max"] = int(times.max())
    return AbsorptionReport(
        fraction_absorbed=fraction,
        quantiles=quantiles,
        n_walks=int(n_walks),
        horizon=int(horizon),
        max_observed_time=int(absorbed_at.max()),
    )


@dataclass
class UniquenessReport:
    n_sinks: int
    min_sink_distance: float
    sink_sizes: list
    non_sink_scc_sizes: list = field(default_factory=list)


def uniqueness_diagnostic(environment: Environment) -> UniquenessReport:
    """Sink count and minimal lattice distance between distinct sinks."""
    if isinstance(environment, PeriodizedEnvironment):
        environment = environment.base
    decomposition = scc_decompose(build_digraph(environment, folded=True))
    sinks = [decomposition.components[i] for i in decomposition.sink_ids]
    non_sinks = [
        len(decomposition.components[i])
        for i in range(decomposition.n_components)
        if not decomposition.is_sink[i]
    ]
    shape = decomposition.graph.shape
    min_dist = float("inf")
    if len(sinks) > 1:
        coords = [np.stack(np.unravel_index(c, shape), axis=-1) for c in sinks]
        for i in range(len(coords)):
            for j in range(i + 1, len(coords)):
                diff = np.abs(coords[i][:, None, :] - coords[j][None, :, :]).sum(axis=-1)
                min_dist = min(min_dist, float(diff.min()))
    return UniquenessReport(
        n_sinks=len(sinks),
        min_sink_distance=min_dist if len(sinks) > 1 else float("nan"),
        sink_sizes=[int(len(c)) for c in sinks],
        non_sink_scc_sizes=[int(s) for s in non_sinks],
    )
