"""Discrete generators, exposed points, and the two pillar inequalities.

This module carries the analytic side of the laboratory: the one-step and
truncated generators of a walk, the exposed set of a test function (sites
whose graph point admits a globally dominating hyperplane), the resulting
maximum-principle inequality, the conditional-displacement diagnostic, and
a Dirichlet solver feeding the mean value inequality.

Exposed-point detection runs geometrically: a site is exposed exactly when
its lifted point lies on the upper convex hull of the lifted domain, and a
containing upper facet hands over a witness slope. Every witness is
re-verified against all constraints; anything ambiguous falls back to a
linear-feasibility solve, and solver failures are counted as exposed, which
can only enlarge the right-hand side of the inequality under test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.ndimage as ndi
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, QhullError

from .env import Environment, EnvSpec, ProceduralEnvironment
from .errors import ConfigurationError, DomainError, NumericalError
from .kernels import propagate_augmented
from .rng import LABEL_BOUNDARY, LABEL_COIN, LABEL_FIELD, key, key_mixin, normals, u01
from .walk import sample_refresh

WITNESS_SLACK = 1e-9
LP_OPTIONS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}


def _box_structure(d: int) -> np.ndarray:
    return np.ones((3,) * d, dtype=bool)


def _linf_dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    if radius <= 0:
        return mask.copy()
    return ndi.binary_dilation(mask, structure=_box_structure(mask.ndim), iterations=radius)


@dataclass
class TestFunction:
    """Values on a finite domain Q plus its width-k collar.

    The grid is the bounding box of Q padded by `collar_width` cells on each
    side; `values` is NaN off Q and its collar. The collar is exactly
    {z not in Q : dist_inf(z, Q) <= collar_width - 1}.
    """

    origin: np.ndarray
    values: np.ndarray
    q_mask: np.ndarray
    collar_mask: np.ndarray
    collar_width: int

    @property
    def d(self) -> int:
        return self.values.ndim

    @property
    def grid_shape(self) -> tuple:
        return self.values.shape

    @classmethod
    def from_mask(cls, origin, q_mask: np.ndarray, collar_width: int, fn) -> "TestFunction":
        if collar_width < 1:
            raise ConfigurationError("collar width must be at least 1")
        origin = np.asarray(origin, dtype=np.int64)
        d = q_mask.ndim
        pad = collar_width
        grid = np.zeros(tuple(s + 2 * pad for s in q_mask.shape), dtype=bool)
        grid[tuple(slice(pad, pad + s) for s in q_mask.shape)] = q_mask
        collar = _linf_dilate(grid, collar_width - 1) & ~grid
        full_origin = origin - pad
        values = np.full(grid.shape, np.nan)
        defined = grid | collar
        pts = np.argwhere(defined) + full_origin
        values[defined] = _evaluate(fn, pts)
        return cls(
            origin=full_origin,
            values=values,
            q_mask=grid,
            collar_mask=collar,
            collar_width=collar_width,
        )

    @classmethod
    def cube(cls, corner, side: int, collar_width: int, fn) -> "TestFunction":
        corner = np.asarray(corner, dtype=np.int64)
        mask = np.ones((side,) * corner.size, dtype=bool)
        return cls.from_mask(corner, mask, collar_width, fn)

    def q_points(self) -> np.ndarray:
        return np.argwhere(self.q_mask) + self.origin

    def collar_points(self) -> np.ndarray:
        return np.argwhere(self.collar_mask) + self.origin

    def domain_points(self) -> np.ndarray:
        return np.argwhere(self.q_mask | self.collar_mask) + self.origin

    def values_at(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.int64))
        rel = points - self.origin
        inside = np.all((rel >= 0) & (rel < self.grid_shape), axis=1)
        out = np.full(points.shape[0], np.nan)
        if inside.any():
            out[inside] = self.values[tuple(rel[inside].T)]
        return out

    def value(self, z) -> float:
        return float(self.values_at(np.asarray(z)[None, :])[0])


def _evaluate(fn, points: np.ndarray) -> np.ndarray:
    if not callable(fn):
        raise ConfigurationError("test-function values must come from a callable")
    try:
        out = np.asarray(fn(points), dtype=float)
        if out.shape == (points.shape[0],):
            return out
    except Exception:
        pass
    return np.asarray([float(fn(p)) for p in points])


def gaussian_test_function(seed: int, corner, side: int, collar_width: int, instance: int = 0) -> TestFunction:
    """Smoothed i.i.d. Gaussian field on a cube with its collar.

    The raw field is keyed per lattice site, then averaged twice with the
    2d+1 nearest-neighbor stencil, which yields exposed sets of middling
    size. Values depend only on (seed, instance, absolute coordinates).
    """
    corner = np.asarray(corner, dtype=np.int64)
    d = corner.size
    pad = collar_width + 2
    shape = tuple(side + 2 * pad for _ in range(d))
    base = corner - pad
    coords = np.stack(np.meshgrid(*[np.arange(s) for s in shape], indexing="ij"), axis=-1) + base
    keys = key_mixin(key(seed, LABEL_FIELD, instance), *[coords[..., a] for a in range(d)])
    noise = normals(keys)
    for _ in range(2):
        total = noise.copy()
        for a in range(d):
            total += np.roll(noise, 1, axis=a) + np.roll(noise, -1, axis=a)
        noise = total / (2 * d + 1)
    # np.roll wraps, so trim the two outermost layers it may have polluted
    inner = tuple(slice(2, s - 2) for s in shape)
    field = noise[inner]
    field_origin = base + 2

    def fn(p):
        rel = np.atleast_2d(np.asarray(p, dtype=np.int64)) - field_origin
        return field[tuple(rel.T)]

    return TestFunction.cube(corner, side, collar_width, fn)


# -- generators ----------------------------------------------------------------


def _h_callable(h):
    if isinstance(h, TestFunction):
        return h.values_at
    if callable(h):
        return lambda pts: np.asarray([float(h(p)) for p in np.atleast_2d(pts)])
    raise ConfigurationError("h must be a TestFunction or a callable")


def generator(environment: Environment, h, z) -> float:
    """L h(z) = h(z) - sum_i w_i (h(z+e_i) + h(z-e_i))."""
    z = np.asarray(z, dtype=np.int64)
    d = z.size
    values = _h_callable(h)
    hw = environment.half_weights_at(z)
    eye = np.eye(d, dtype=np.int64)
    stencil = np.concatenate([z[None, :], z + eye, z - eye])
    vals = values(stencil)
    if np.isnan(vals).any():
        raise DomainError(f"h undefined on a neighbor of {z.tolist()}")
    return float(vals[0] - hw @ (vals[1 : d + 1] + vals[d + 1 :]))


def truncated_generator(environment: Environment, h: TestFunction, k: int, z) -> float:
    """h(z) - E^z[h at the refresh time truncated at k], exactly.

    The expectation comes from forward propagation on the radius-k window
    around z; if the stopped chain can put mass where h is undefined the
    collar is too small and a domain error is raised.
    """
    z = np.asarray(z, dtype=np.int64)
    d = z.size
    if k < 1:
        raise ConfigurationError("truncation must be at least 1")
    window = 2 * k + 1
    offsets = np.stack(
        np.meshgrid(*[np.arange(-k, k + 1)] * d, indexing="ij"), axis=-1
    ).reshape(-1, d)
    hw = environment.half_weights_at(z + offsets).reshape((window,) * d + (d,))
    center = np.full((1, d), k, dtype=np.int64)
    y1, _, _, occupation, _ = propagate_augmented(hw[None], center, k, fold=False)
    visited = (y1[0] + occupation[0]) > 0.0
    pts = z + offsets[visited]
    vals = h.values_at(pts)
    if np.isnan(vals).any():
        raise DomainError("stopped chain reaches sites where h is undefined; collar too small")
    h_z = h.value(z)
    stopped = h.values_at(z + offsets)
    return float(h_z - y1[0] @ np.where(np.isnan(stopped), 0.0, stopped))


def _truncated_generator_grid(environment: Environment, h: TestFunction, k: int, chunk: int = 256):
    """Truncated generator and refresh survival at every z in Q, batched."""
    d = h.d
    grid_coords = np.stack(
        np.meshgrid(*[np.arange(s) for s in h.grid_shape], indexing="ij"), axis=-1
    )
    flat_coords = grid_coords.reshape(-1, d) + h.origin
    hw = environment.half_weights_at(flat_coords).reshape(h.grid_shape + (d,))
    starts = np.argwhere(h.q_mask)
    q_abs = starts + h.origin
    h_flat = np.where(np.isnan(h.values), 0.0, h.values).ravel()
    nan_flat = np.isnan(h.values).ravel()
    m = starts.shape[0]
    l_values = np.empty(m)
    survival = np.empty(m)
    h_at_q = h.values[tuple(starts.T)]
    for lo in range(0, m, chunk):
        hi = min(lo + chunk, m)
        try:
            y1, _, _, occupation, surv = propagate_augmented(hw, starts[lo:hi], k, fold=False)
        except NumericalError as exc:
            raise DomainError(f"stopped chain escapes the stored grid: {exc}") from exc
        touched = (y1 + occupation) > 0.0
        if np.any(touched[:, nan_flat]):
            raise DomainError("stopped chain reaches sites where h is undefined; collar too small")
        l_values[lo:hi] = h_at_q[lo:hi] - y1 @ h_flat
        survival[lo:hi] = surv
    return l_values, survival, q_abs


# -- exposed points --------------------------------------------------------------


@dataclass
class ExposedReport:
    q_points: np.ndarray
    exposed: np.ndarray
    beta: np.ndarray
    indeterminate: np.ndarray
    method: str
    n_lp_calls: int = 0

    @property
    def n_exposed(self) -> int:
        return int(self.exposed.sum())


def _verify_witnesses(pts, vals, z_pts, z_vals, betas, slack=WITNESS_SLACK) -> np.ndarray:
    """Max violation of h(x) <= h(z) + <beta, x-z> per witness, vectorized."""
    proj = pts @ betas.T  # (n, m)
    margins = vals[:, None] - proj  # h(x) - <beta, x>
    best = margins.max(axis=0)
    base = z_vals - np.einsum("md,md->m", z_pts.astype(float), betas)
    return best - base  # <= slack means the witness dominates everywhere


def _lp_exposed(pts, vals, z, h_z):
    d = pts.shape[1]
    a_ub = z[None, :].astype(float) - pts
    b_ub = h_z - vals
    res = linprog(
        np.zeros(d),
        A_ub=a_ub,
        b_ub=b_ub,
        bounds=[(None, None)] * d,
        method="highs",
        options=LP_OPTIONS,
    )
    if res.status == 0:
        return True, res.x
    if res.status == 2:
        return False, None
    return None, None


def exposed_set(h: TestFunction, domain_mask: np.ndarray | None = None) -> ExposedReport:
    """Exposure flag and witness slope for every z in Q.

    A site is exposed when its lifted point (z, h(z)) lies on the upper
    convex hull of the lifted domain; the containing facet's slope is the
    witness. Witnesses are re-verified against every constraint, ambiguous
    sites go to a feasibility LP, and LP failures count as exposed.
    An explicit `domain_mask` restricts the constraint set (the dominated
    region) to a subset of the stored grid; Q itself is always included.
    """
    if domain_mask is None:
        domain_mask = h.q_mask | h.collar_mask
    else:
        domain_mask = domain_mask | h.q_mask
    dom_pts = np.argwhere(domain_mask) + h.origin
    pts = dom_pts.astype(float)
    vals_all = h.values_at(dom_pts)
    if np.isnan(vals_all).any():
        raise DomainError("h undefined on part of the requested constraint set")
    q_pts = h.q_points()
    h_q = h.values_at(q_pts)
    m = q_pts.shape[0]
    d = h.d

    exposed = np.zeros(m, dtype=bool)
    beta = np.full((m, d), np.nan)
    indeterminate = np.zeros(m, dtype=bool)

    # affine fast path: the plane itself witnesses every site
    design = np.column_stack([pts, np.ones(len(pts))])
    coef, *_ = np.linalg.lstsq(design, vals_all, rcond=None)
    if np.max(np.abs(design @ coef - vals_all)) <= WITNESS_SLACK:
        exposed[:] = True
        beta[:] = coef[:d]
        return ExposedReport(q_pts, exposed, beta, indeterminate, method="affine")

    lp_calls = 0
    needs_lp = np.ones(m, dtype=bool)
    method = "hull"
    try:
        hull = ConvexHull(np.column_stack([pts, vals_all]))
        eq = hull.equations
        upper = eq[:, d] > 1e-12
        if upper.any():
            n_xy = eq[upper, :d]
            n_t = eq[upper, d]
            off = eq[upper, d + 1]
            slopes = -n_xy / n_t[:, None]
            intercepts = -off / n_t
            planes_at_q = slopes @ q_pts.astype(float).T + intercepts[:, None]
            envelope = planes_at_q.min(axis=0)
            facet_idx = planes_at_q.argmin(axis=0)
            on_hull = envelope <= h_q + WITNESS_SLACK
            candidate_beta = slopes[facet_idx]
            gaps = _verify_witnesses(pts, vals_all, q_pts.astype(float), h_q, candidate_beta)
            confirmed = on_hull & (gaps <= WITNESS_SLACK)
            exposed[confirmed] = True
            beta[confirmed] = candidate_beta[confirmed]
            clearly_off = envelope > h_q + 1e-6
            needs_lp = ~confirmed & ~clearly_off
        else:
            method = "lp"
    except QhullError:
        method = "lp"

    for i in np.flatnonzero(needs_lp):
        verdict, witness = _lp_exposed(pts, vals_all, q_pts[i], h_q[i])
        lp_calls += 1
        if verdict is True:
            gap = _verify_witnesses(
                pts, vals_all, q_pts[i : i + 1].astype(float), h_q[i : i + 1], witness[None, :]
            )[0]
            if gap <= WITNESS_SLACK:
                exposed[i] = True
                beta[i] = witness
            else:
                exposed[i] = True
                indeterminate[i] = True
        elif verdict is False:
            exposed[i] = False
        else:
            exposed[i] = True
            indeterminate[i] = True
    return ExposedReport(q_pts, exposed, beta, indeterminate, method=method, n_lp_calls=lp_calls)


# -- the maximum principle ---------------------------------------------------------


@dataclass
class MaxPrincipleReport:
    lhs: float
    rhs: float
    precondition_max_prob: float
    holds: bool
    n_exposed: int
    n_indeterminate: int
    N: int
    k: int


def max_principle_check(environment: Environment, h: TestFunction, k: int) -> MaxPrincipleReport:
    """Both sides of the boundary-gap inequality, computed exactly.

    lhs = max_Q h - max over the width-k collar of h; rhs sums |truncated
    generator|^d over the exposed subset of Q and scales by 6N. The refresh
    survival P^z(T_1 > k) comes from the same propagation, so the reported
    precondition is exact rather than sampled.
    """
    extents = [int(c.max() - c.min()) + 1 for c in h.q_points().T]
    N = max(extents)
    if not 1 <= k < N:
        raise ConfigurationError(f"need 1 <= k < N (k={k}, N={N})")
    strict_collar = _linf_dilate(h.q_mask, k - 1) & ~h.q_mask
    collar_vals = h.values[strict_collar]
    if collar_vals.size == 0 or np.isnan(collar_vals).any():
        raise DomainError("h lacks values on the width-k collar")
    lhs = float(np.nanmax(h.values[h.q_mask]) - collar_vals.max())

    l_values, survival, q_abs = _truncated_generator_grid(environment, h, k)
    report = exposed_set(h, domain_mask=h.q_mask | strict_collar)
    if not np.array_equal(report.q_points, q_abs):
        raise NumericalError("exposed set and generator grid disagree on Q")
    d = h.d
    rhs = float(6.0 * N * (np.abs(l_values[report.exposed]) ** d).sum() ** (1.0 / d))
    precondition = float(survival.max())
    return MaxPrincipleReport(
        lhs=lhs,
        rhs=rhs,
        precondition_max_prob=precondition,
        holds=bool(lhs <= rhs + WITNESS_SLACK),
        n_exposed=report.n_exposed,
        n_indeterminate=int(report.indeterminate.sum()),
        N=N,
        k=k,
    )


SWEEP_VARIANTS = ("uniform-srw", "random-direction", "elliptic-dirichlet")


def _sweep_instance(seed: int, index: int, d: int = 2) -> dict:
    variant = SWEEP_VARIANTS[index % len(SWEEP_VARIANTS)]
    if variant == "uniform-srw":
        spec = EnvSpec.uniform_srw(d)
    elif variant == "random-direction":
        spec = EnvSpec.random_direction(d)
    else:
        spec = EnvSpec.elliptic_dirichlet((1.0,) * d)
    draw = u01(key(seed, LABEL_FIELD, index, 0xA11))
    N = 8 + int(draw * 25)  # {8, ..., 32}
    k = N // 2
    env_seed = int(key(seed, 0xE57, index))
    environment = ProceduralEnvironment(spec, env_seed)
    corner = -(np.full(d, N // 2, dtype=np.int64))
    h = gaussian_test_function(seed, corner, N, collar_width=k + 1, instance=index)
    report = max_principle_check(environment, h, k)
    return {
        "index": index,
        "variant": variant,
        "env_seed": env_seed,
        "N": report.N,
        "k": report.k,
        "lhs": report.lhs,
        "rhs": report.rhs,
        "precondition_estimate": report.precondition_max_prob,
        "holds": report.holds,
        "n_exposed": report.n_exposed,
    }


def max_principle_sweep(n_instances: int, seed: int, d: int = 2, pool=None) -> list[dict]:
    """Randomized instances of the inequality across environment variants."""
    indices = range(n_instances)
    if pool is None:
        return [_sweep_instance(seed, i, d) for i in indices]
    return list(pool.map(lambda i: _sweep_instance(seed, i, d), indices))


# -- conditional displacement -------------------------------------------------------


@dataclass
class ConditionalDisplacement:
    axis: int
    cap: int
    estimate: np.ndarray
    stderr: np.ndarray
    n_selected: int
    p_axis_plus_given_selected: float
    trials: int


def conditional_displacement(
    env_or_spec,
    z,
    axis: int,
    cap: int,
    trials: int,
    seed: int,
    mode: str = "quenched",
) -> ConditionalDisplacement:
    """Mean stopped displacement conditioned on a positive first axis move.

    Trials whose axis never moves before the truncated refresh time are
    assigned by an auxiliary fair coin, matching the symmetrized definition
    of the event being conditioned on.
    """
    if trials < 1:
        raise ConfigurationError("need at least one trial")
    z = np.asarray(z, dtype=np.int64)
    result = sample_refresh(
        env_or_spec, z, trials, seed, cap=cap, mode=mode, track_axis=axis
    )
    coin = u01(key_mixin(key(seed, LABEL_COIN, axis), np.arange(trials))) < 0.5
    never_moved = result.first_time < 0
    plus = (~never_moved & (result.first_sign > 0)) | (never_moved & coin)
    selected = result.positions[plus] - z
    n = int(plus.sum())
    if n == 0:
        raise NumericalError("no trial landed in the conditioning event")
    estimate = selected.mean(axis=0)
    stderr = selected.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.full(z.size, np.inf)
    p_given = float((~never_moved & plus).sum() / n)
    return ConditionalDisplacement(
        axis=int(axis),
        cap=int(cap),
        estimate=estimate.astype(float),
        stderr=stderr,
        n_selected=n,
        p_axis_plus_given_selected=p_given,
        trials=int(trials),
    )


# -- harmonic functions and the mean value inequality --------------------------------


@dataclass
class HarmonicFunction:
    center: np.ndarray
    radius: float
    origin: np.ndarray
    values: np.ndarray
    ball_mask: np.ndarray
    boundary_mask: np.ndarray
    stranded: np.ndarray
    residual: float

    def values_at(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.int64))
        rel = points - self.origin
        inside = np.all((rel >= 0) & (rel < self.values.shape), axis=1)
        out = np.full(points.shape[0], np.nan)
        if inside.any():
            out[inside] = self.values[tuple(rel[inside].T)]
        return out

    def value(self, z) -> float:
        return float(self.values_at(np.asarray(z)[None, :])[0])

    def ball_points(self, radius: float | None = None) -> np.ndarray:
        pts = np.argwhere(self.ball_mask) + self.origin
        if radius is None:
            return pts
        dist = np.linalg.norm(pts - self.center, axis=1)
        return pts[dist <= radius]


def _ball_masks(center: np.ndarray, radius: float):
    d = center.size
    r_int = int(math.floor(radius))
    span = 2 * (r_int + 1) + 1
    origin = center - (r_int + 1)
    coords = np.stack(
        np.meshgrid(*[np.arange(span)] * d, indexing="ij"), axis=-1
    ) + origin
    dist = np.sqrt(((coords - center) ** 2).sum(axis=-1))
    ball = dist <= radius + 1e-12
    boundary = ndi.binary_dilation(ball) & ~ball  # cross structure: lattice neighbors
    return origin, coords, ball, boundary


def harmonic_solve(environment: Environment, center, radius: float, boundary_values) -> HarmonicFunction:
    """Solve L u = 0 on a lattice ball with given exterior-neighbor values.

    Interior sites that cannot reach the boundary (possible without
    ellipticity) form closed sub-dynamics; they all get the mean boundary
    value, which is exactly harmonic there, and the reachable part is solved
    sparsely. The residual is checked over the whole interior.
    """
    center = np.asarray(center, dtype=np.int64)
    origin, coords, ball, boundary = _ball_masks(center, radius)
    shape = ball.shape
    d = center.size
    n_cells = int(np.prod(shape))
    cell_index = np.arange(n_cells).reshape(shape)

    if callable(boundary_values):
        bvals = np.asarray(
            [float(boundary_values(p)) for p in coords[boundary]], dtype=float
        )
    elif isinstance(boundary_values, dict):
        bvals = np.asarray(
            [float(boundary_values[tuple(p)]) for p in coords[boundary]], dtype=float
        )
    else:
        bvals = np.full(int(boundary.sum()), float(boundary_values))

    interior_ids = cell_index[ball]
    boundary_ids = cell_index[boundary]
    role = np.full(n_cells, -1, dtype=np.int64)  # -1 outside, 0 interior, 1 boundary
    role[interior_ids] = 0
    role[boundary_ids] = 1
    value_of = np.full(n_cells, np.nan)
    value_of[boundary_ids] = bvals

    hw = environment.half_weights_at(coords[ball]).astype(float)
    n_int = interior_ids.size
    rows, cols, data = [], [], []
    neighbor_ids = np.empty((n_int, 2 * d), dtype=np.int64)
    int_coords = coords[ball]
    for a in range(d):
        for j, sign in enumerate((1, -1)):
            moved = int_coords.copy()
            moved[:, a] += sign
            rel = moved - origin
            neighbor_ids[:, 2 * a + j] = np.ravel_multi_index(tuple(rel.T), shape)
    weights = np.repeat(hw, 2, axis=1)

    # reachability of the boundary through positive-weight edges
    pos_edge = weights > 0.0
    src = np.repeat(np.arange(n_int), 2 * d)[pos_edge.ravel()]
    dst = neighbor_ids.ravel()[pos_edge.ravel()]
    reach = np.zeros(n_cells, dtype=bool)
    reach[boundary_ids] = True
    adj = sp.csr_matrix(
        (np.ones(src.size, dtype=bool), (interior_ids[src], dst)), shape=(n_cells, n_cells)
    )
    while True:
        grown = reach | np.asarray(adj @ reach, dtype=bool)
        if (grown == reach).all():
            break
        reach = grown
    stranded_mask_int = ~reach[interior_ids]
    stranded_cells = interior_ids[stranded_mask_int]
    c_strand = float(bvals.mean()) if stranded_cells.size else 0.0
    value_of[stranded_cells] = c_strand

    solve_mask = ~stranded_mask_int
    solve_ids = interior_ids[solve_mask]
    pos_in_solve = np.full(n_cells, -1, dtype=np.int64)
    pos_in_solve[solve_ids] = np.arange(solve_ids.size)
    rhs = np.zeros(solve_ids.size)
    sub_rows, sub_cols, sub_data = [], [], []
    w_solve = weights[solve_mask]
    nb_solve = neighbor_ids[solve_mask]
    for col in range(2 * d):
        w = w_solve[:, col]
        nb = nb_solve[:, col]
        live = w > 0.0
        to_interior = live & (pos_in_solve[nb] >= 0)
        sub_rows.append(np.flatnonzero(to_interior))
        sub_cols.append(pos_in_solve[nb[to_interior]])
        sub_data.append(-w[to_interior])
        to_known = live & (pos_in_solve[nb] < 0)
        np.add.at(rhs, np.flatnonzero(to_known), w[to_known] * value_of[nb[to_known]])
    matrix = sp.coo_matrix(
        (
            np.concatenate([np.ones(solve_ids.size), *sub_data]),
            (
                np.concatenate([np.arange(solve_ids.size), *sub_rows]),
                np.concatenate([np.arange(solve_ids.size), *sub_cols]),
            ),
        ),
        shape=(solve_ids.size, solve_ids.size),
    ).tocsr()
    if solve_ids.size:
        u = spla.spsolve(matrix, rhs)
        value_of[solve_ids] = u

    values = np.full(shape, np.nan)
    flat = values.ravel()
    flat[interior_ids] = value_of[interior_ids]
    flat[boundary_ids] = value_of[boundary_ids]
    values = flat.reshape(shape)

    expectations = (weights * value_of[neighbor_ids]).sum(axis=1)
    residual = float(np.max(np.abs(value_of[interior_ids] - expectations)))
    if residual > 1e-9:
        raise NumericalError(f"harmonic residual {residual:.2e} above 1e-9")
    stranded_points = coords.reshape(-1, d)[stranded_cells] if stranded_cells.size else np.empty((0, d), dtype=np.int64)
    return HarmonicFunction(
        center=center,
        radius=float(radius),
        origin=origin,
        values=values,
        ball_mask=ball,
        boundary_mask=boundary,
        stranded=stranded_points,
        residual=residual,
    )


def random_boundary_values(seed: int, instance: int = 0, positive: bool = False):
    """Keyed Gaussian boundary data, reproducible per lattice site.

    With `positive` the values are folded to their absolute value, which
    keeps the harmonic function nonnegative and the mean-value ratios away
    from sign flips.
    """
    base = key(seed, LABEL_BOUNDARY, instance)

    def fn(p):
        p = np.asarray(p, dtype=np.int64)
        value = float(normals(key_mixin(base, *[int(c) for c in p])))
        return abs(value) if positive else value

    return fn


@dataclass
class MeanValueReport:
    lhs: float
    rhs_norm: float
    ratio: float
    sigma: float
    p: float


def mean_value_check(u: HarmonicFunction, x_0, N: float, sigma: float, p: float) -> MeanValueReport:
    """max of u over the inner ball against the normalized p-norm of u^+."""
    if not 0 < sigma < 1:
        raise ConfigurationError("sigma must be in (0, 1)")
    if p <= 0:
        raise ConfigurationError("p must be positive")
    x_0 = np.asarray(x_0, dtype=np.int64)
    pts = u.ball_points()
    dist = np.linalg.norm(pts - x_0, axis=1)
    vals = u.values_at(pts)
    inner_vals = vals[dist <= sigma * N + 1e-12]
    outer_vals = vals[dist <= N + 1e-12]
    if inner_vals.size == 0 or outer_vals.size == 0:
        raise ConfigurationError("ball contains no lattice point at this radius")
    lhs = float(inner_vals.max())
    plus = np.clip(outer_vals, 0.0, None)
    rhs = float(np.mean(plus**p) ** (1.0 / p))
    if rhs > 0:
        ratio = lhs / rhs
    else:
        ratio = 0.0 if lhs <= 0 else float("inf")
    return MeanValueReport(lhs=lhs, rhs_norm=rhs, ratio=float(ratio), sigma=float(sigma), p=float(p))
