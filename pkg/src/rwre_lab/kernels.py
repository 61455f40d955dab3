"""Exact transition kernels on reflected boxes and their rescaled chains.

States are the cells of the folded cube [0, N)^d in row-major order. The
reflected kernel moves with the site's half-weights and folds boundary
crossings back (which appear as holding probability). The rescaled kernel
observes the walk at its first (truncated) refresh time; it is computed by
exact forward propagation of the augmented chain whose state is (position,
set of axes used, steps elapsed). Holding steps in the folded picture are
genuine moves of the unfolded periodized walk, so they do count toward axis
refreshment; only the position is folded.

The same propagation engine runs in an unfolded window geometry, which the
maximum-principle machinery uses for truncated generators and which makes
the stopped-walk balance identity (mean displacement exactly zero at any
bounded truncation) directly checkable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .env import BoxedEnvironment, Environment, PeriodizedEnvironment
from .errors import (
    ClosureError,
    ConfigurationError,
    NumericalError,
    PreconditionError,
    ResourceBudgetError,
)

STATE_BUDGET = 5 * 10**7
DENSE_RESULT_BUDGET = 6 * 10**7
ROW_SUM_TOL = 1e-12
STATIONARY_TOL = 1e-10
DIRECT_SOLVE_LIMIT = 20_000
SUPPORT_THRESHOLD = 1e-9


# -- small dataclasses ---------------------------------------------------------


@dataclass
class SparseKernel:
    """Row-stochastic kernel over the folded cube, rows in row-major order."""

    matrix: sp.csr_matrix
    N: int
    d: int
    kind: str
    cap: int | None = None

    def __post_init__(self):
        sums = np.asarray(self.matrix.sum(axis=1)).ravel()
        if np.max(np.abs(sums - 1.0)) > 1e-9:
            raise NumericalError(f"{self.kind} kernel rows do not sum to 1")

    @property
    def n_states(self) -> int:
        return self.matrix.shape[0]

    def export_text(self, path: str) -> None:
        """Plain `row col prob` triples under a `# N d kind cap` header."""
        coo = self.matrix.tocoo()
        with open(path, "w") as handle:
            handle.write(f"# {self.N} {self.d} {self.kind} {self.cap if self.cap is not None else -1}\n")
            for r, c, v in zip(coo.row, coo.col, coo.data):
                handle.write(f"{r} {c} {v!r}\n")


@dataclass
class AugmentedChainResult:
    """Exact law of the truncated rescaled step from every start.

    y1[z] is the distribution of the walk's position at min(T_1, cap);
    t_mean/t_second are E[min(T_1,cap)^q]; occupation[z, x] sums
    P(X_i = x, T_1 > i) over 0 <= i < cap; survival[z] = P(T_1 > cap).
    """

    y1: np.ndarray
    t_mean: np.ndarray
    t_second: np.ndarray
    occupation: np.ndarray
    survival: np.ndarray
    N: int
    d: int
    cap: int
    monte_carlo: bool = False

    def kernel(self) -> SparseKernel:
        return SparseKernel(sp.csr_matrix(self.y1), self.N, self.d, "rescaled", self.cap)


@dataclass
class MeasureOnBox:
    """Probability measure on the folded cube, kept with its support class."""

    weights: np.ndarray
    N: int
    d: int
    class_states: np.ndarray

    def __post_init__(self):
        total = float(self.weights.sum())
        if abs(total - 1.0) > 1e-9:
            raise NumericalError(f"measure mass {total} != 1")

    @property
    def n_states(self) -> int:
        return self.weights.size

    def density(self) -> np.ndarray:
        """Radon-Nikodym derivative against the uniform measure on the cube."""
        return self.weights * self.weights.size

    def support(self, threshold: float = SUPPORT_THRESHOLD) -> np.ndarray:
        return np.flatnonzero(self.density() > threshold)

    def norm(self, p: float) -> float:
        phi = self.density()
        return float(np.mean(np.abs(phi) ** p) ** (1.0 / p))

    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "d": self.d,
            "weights": self.weights.tolist(),
            "class": self.class_states.tolist(),
        }


# -- reflected one-step kernel -------------------------------------------------


def _require_cube(environment: Environment) -> BoxedEnvironment:
    if isinstance(environment, PeriodizedEnvironment):
        environment = environment.base
    if not isinstance(environment, BoxedEnvironment):
        raise ConfigurationError("kernels need a boxed (or periodized boxed) environment")
    if len(set(environment.shape)) != 1:
        raise ConfigurationError("kernels need a cubic box")
    return environment


def fold_neighbor_table(N: int, d: int) -> np.ndarray:
    """targets[s, 2*a + (0 pos / 1 neg)] = folded neighbor of state s."""
    shape = (N,) * d
    coords = np.stack(np.meshgrid(*[np.arange(N)] * d, indexing="ij"), axis=-1).reshape(-1, d)
    targets = np.empty((coords.shape[0], 2 * d), dtype=np.int64)
    for a in range(d):
        for j, sign in enumerate((1, -1)):
            moved = coords.copy()
            moved[:, a] += sign
            r = np.mod(moved[:, a], 2 * N)
            moved[:, a] = np.minimum(r, 2 * N - 1 - r)
            targets[:, 2 * a + j] = np.ravel_multi_index(tuple(moved.T), shape)
    return targets


def reflected_kernel(environment: Environment) -> SparseKernel:
    """One-step kernel of the walk folded into its cube.

    Each row sends half_weights[a] to the folded image of x +- e_a; a move
    that folds back onto x shows up as holding mass.
    """
    base = _require_cube(environment)
    N, d = base.shape[0], base.d
    S = N**d
    hw = base.table.reshape(S, d)
    targets = fold_neighbor_table(N, d)
    rows = np.repeat(np.arange(S), 2 * d)
    cols = targets.ravel()
    data = np.repeat(hw, 2, axis=1).ravel()
    matrix = sp.coo_matrix((data, (rows, cols)), shape=(S, S)).tocsr()
    sums = np.asarray(matrix.sum(axis=1)).ravel()
    if np.max(np.abs(sums - 1.0)) > ROW_SUM_TOL:
        raise NumericalError("reflected kernel rows drifted from 1")
    return SparseKernel(matrix, N, d, "reflected")


# -- augmented-chain propagation ------------------------------------------------


def _axis_slices(ndim: int, axis: int, s) -> tuple:
    idx = [slice(None)] * ndim
    idx[axis] = s
    return tuple(idx)


def _shift(arr: np.ndarray, axis: int, sign: int, fold: bool) -> np.ndarray:
    out = np.zeros_like(arr)
    if sign > 0:
        out[_axis_slices(arr.ndim, axis, slice(1, None))] = arr[_axis_slices(arr.ndim, axis, slice(None, -1))]
        if fold:
            out[_axis_slices(arr.ndim, axis, slice(-1, None))] += arr[_axis_slices(arr.ndim, axis, slice(-1, None))]
    else:
        out[_axis_slices(arr.ndim, axis, slice(None, -1))] = arr[_axis_slices(arr.ndim, axis, slice(1, None))]
        if fold:
            out[_axis_slices(arr.ndim, axis, slice(0, 1))] += arr[_axis_slices(arr.ndim, axis, slice(0, 1))]
    return out


def propagate_augmented(
    hw_grid: np.ndarray,
    start_cells: np.ndarray,
    cap: int,
    *,
    fold: bool,
    collect_occupation: bool = True,
):
    """Exact forward propagation of (position, axes-used, elapsed) chains.

    hw_grid: half-weights per grid cell, shape (*grid, d) shared by all
    starts, or (B, *grid, d) per start (window geometry). start_cells: (B, d)
    grid indices. Absorption happens when the axis set completes (at the
    move's target) or when `cap` moves elapse (in place). Returns dense
    (B, P) target/occupation arrays plus per-start moments and survival.
    """
    per_start_laws = hw_grid.ndim == start_cells.shape[1] + 2
    d = hw_grid.shape[-1]
    grid = hw_grid.shape[-d - 1 : -1] if per_start_laws else hw_grid.shape[:-1]
    B = start_cells.shape[0]
    P = int(np.prod(grid))
    full = (1 << d) - 1
    if cap < 1:
        raise ConfigurationError("cap must be >= 1")

    live = np.zeros((B, full + 1) + grid)
    idx = (np.arange(B), np.zeros(B, dtype=np.int64)) + tuple(start_cells.T)
    live[idx] = 1.0

    y1 = np.zeros((B,) + grid)
    occupation = np.zeros((B,) + grid) if collect_occupation else None
    t_mean = np.zeros(B)
    t_second = np.zeros(B)
    grid_sum_axes = tuple(range(1, 1 + d))

    hw_per_axis = [
        (hw_grid[..., a] if per_start_laws else hw_grid[None, ..., a]) for a in range(d)
    ]
    active_masks = {0}
    for t in range(cap):
        if collect_occupation:
            occupation += live.sum(axis=1)
        new_live = np.zeros_like(live)
        next_masks = set()
        for mask in sorted(active_masks):
            src = live[:, mask]
            for a in range(d):
                contrib = src * hw_per_axis[a]
                new_mask = mask | (1 << a)
                for sign in (1, -1):
                    moved = _shift(contrib, 1 + a, sign, fold)
                    if new_mask == full:
                        y1 += moved
                        absorbed = moved.sum(axis=grid_sum_axes)
                        t_mean += (t + 1) * absorbed
                        t_second += float(t + 1) ** 2 * absorbed
                    else:
                        new_live[:, new_mask] += moved
                        next_masks.add(new_mask)
        live = new_live
        active_masks = next_masks
    leftover = live.sum(axis=1)
    survival = leftover.sum(axis=grid_sum_axes)
    y1 += leftover
    t_mean += cap * survival
    t_second += float(cap) ** 2 * survival

    totals = y1.sum(axis=grid_sum_axes)
    if np.max(np.abs(totals - 1.0)) > 1e-9:
        raise NumericalError("augmented chain lost probability mass")
    return (
        y1.reshape(B, P),
        t_mean,
        t_second,
        occupation.reshape(B, P) if collect_occupation else None,
        survival,
    )


def rescaled_kernel(environment: Environment, cap: int, *, chunk: int = 256) -> AugmentedChainResult:
    """Exact law of the walk at min(T_1, cap) from every cell of the cube.

    The state budget |cube| * 2^d * cap must stay under STATE_BUDGET; larger
    problems should use `rescaled_kernel_mc`.
    """
    base = _require_cube(environment)
    N, d = base.shape[0], base.d
    S = N**d
    if S * (2**d) * cap > STATE_BUDGET:
        raise ResourceBudgetError(
            f"augmented chain needs {S * 2**d * cap} states (> {STATE_BUDGET}); "
            "use rescaled_kernel_mc"
        )
    if S * S > DENSE_RESULT_BUDGET:
        raise ResourceBudgetError(
            f"dense Y_1 law needs {S}x{S} entries (> {DENSE_RESULT_BUDGET}); "
            "use rescaled_kernel_mc"
        )
    coords = np.stack(np.meshgrid(*[np.arange(N)] * d, indexing="ij"), axis=-1).reshape(-1, d)
    y1 = np.empty((S, S))
    t_mean = np.empty(S)
    t_second = np.empty(S)
    occupation = np.empty((S, S))
    survival = np.empty(S)
    for lo in range(0, S, chunk):
        hi = min(lo + chunk, S)
        block = propagate_augmented(base.table, coords[lo:hi], cap, fold=True)
        y1[lo:hi], t_mean[lo:hi], t_second[lo:hi], occupation[lo:hi], survival[lo:hi] = block
    if np.any(t_mean < min(d, cap) - 1e-9):
        raise NumericalError("rescaled chain reports a refresh faster than one move per axis")
    return AugmentedChainResult(y1, t_mean, t_second, occupation, survival, N, d, cap)


def rescaled_kernel_mc(
    environment: Environment,
    cap: int,
    n_samples: int,
    seed: int,
) -> AugmentedChainResult:
    """Monte Carlo fallback for the rescaled law when exact propagation is
    over budget. Same output surface, flagged `monte_carlo=True`."""
    from .walk import sample_refresh  # local import to keep module layers acyclic

    base = _require_cube(environment)
    N, d = base.shape[0], base.d
    S = N**d
    periodized = PeriodizedEnvironment(base)
    coords = np.stack(np.meshgrid(*[np.arange(N)] * d, indexing="ij"), axis=-1).reshape(-1, d)
    shape = (N,) * d
    y1 = np.zeros((S, S))
    occupation = np.zeros((S, S))
    t_mean = np.empty(S)
    t_second = np.empty(S)
    survival = np.empty(S)
    for s in range(S):
        result = sample_refresh(periodized, coords[s], n_samples, seed + s, cap=cap)
        folded = np.mod(result.positions, 2 * N)
        folded = np.minimum(folded, 2 * N - 1 - folded)
        cells = np.ravel_multi_index(tuple(folded.T), shape)
        np.add.at(y1[s], cells, 1.0 / n_samples)
        durations = result.durations.astype(np.float64)
        t_mean[s] = durations.mean()
        t_second[s] = (durations**2).mean()
        survival[s] = 1.0 - result.refreshed.mean()
        occupation[s, s] += 1.0  # i = 0 term
    return AugmentedChainResult(y1, t_mean, t_second, occupation, survival, N, d, cap, monte_carlo=True)


def stopped_mean_displacement(environment: Environment, start, cap: int) -> np.ndarray:
    """Mean displacement of the unfolded walk stopped at min(T_1, cap).

    Balance makes each coordinate a martingale and the truncated refresh
    time is bounded, so this is exactly zero up to float roundoff, including
    all truncation effects.
    """
    start = np.asarray(start, dtype=np.int64)
    d = start.size
    window = 2 * cap + 1
    offsets = np.stack(
        np.meshgrid(*[np.arange(-cap, cap + 1)] * d, indexing="ij"), axis=-1
    ).reshape(-1, d)
    hw = environment.half_weights_at(start + offsets).reshape((window,) * d + (d,))
    center = np.full((1, d), cap, dtype=np.int64)
    y1, _, _, _, _ = propagate_augmented(hw[None], center, cap, fold=False, collect_occupation=False)
    return y1[0] @ offsets


# -- stationary measures ---------------------------------------------------------


def _as_matrix(kernel) -> sp.csr_matrix:
    if isinstance(kernel, SparseKernel):
        return kernel.matrix
    if isinstance(kernel, AugmentedChainResult):
        return sp.csr_matrix(kernel.y1)
    if sp.issparse(kernel):
        return kernel.tocsr()
    return sp.csr_matrix(np.asarray(kernel))


def _meta(kernel, matrix) -> tuple[int, int]:
    if isinstance(kernel, (SparseKernel, AugmentedChainResult)):
        return kernel.N, kernel.d
    n = matrix.shape[0]
    return n, 1


def _positivity_adjacency(matrix: sp.csr_matrix) -> list[np.ndarray]:
    indptr, indices, data = matrix.indptr, matrix.indices, matrix.data
    return [
        indices[indptr[i] : indptr[i + 1]][data[indptr[i] : indptr[i + 1]] > 0.0]
        for i in range(matrix.shape[0])
    ]


def _canonical_sink(matrix: sp.csr_matrix, restrict=None) -> np.ndarray:
    """The sink component containing the smallest row-major state index."""
    from .sinks import strongly_connected_components  # acyclic: sinks has no kernel import

    adjacency = _positivity_adjacency(matrix)
    if restrict is not None:
        allowed = np.zeros(matrix.shape[0], dtype=bool)
        allowed[restrict] = True
        adjacency = [
            (nbrs[allowed[nbrs]] if allowed[i] else np.empty(0, dtype=nbrs.dtype))
            for i, nbrs in enumerate(adjacency)
        ]
        components = strongly_connected_components(adjacency)
        components = [c for c in components if allowed[c[0]]]
    else:
        components = strongly_connected_components(adjacency)
    comp_of = {}
    for ci, comp in enumerate(components):
        for node in comp:
            comp_of[int(node)] = ci
    sinks = []
    for ci, comp in enumerate(components):
        is_sink = all(comp_of[int(t)] == ci for node in comp for t in adjacency[int(node)])
        if is_sink:
            sinks.append(comp)
    if not sinks:
        raise NumericalError("no closed class found")
    sinks.sort(key=lambda c: int(np.min(c)))
    return np.asarray(sorted(int(v) for v in sinks[0]), dtype=np.int64)


def _power_iteration(K: sp.csr_matrix, tol: float = 1e-12, max_sweeps: int = 500_000) -> np.ndarray:
    n = K.shape[0]
    mu = np.full(n, 1.0 / n)
    for _ in range(max_sweeps):
        nxt = 0.5 * mu + 0.5 * (mu @ K)
        nxt /= nxt.sum()
        if np.abs(nxt - mu).sum() < tol:
            return nxt
        mu = nxt
    raise NumericalError("power iteration did not converge")


def stationary(kernel, class_states=None) -> MeasureOnBox:
    """A stationary probability measure of a row-stochastic kernel.

    With `class_states` the solve restricts to that class (which must be
    closed); otherwise the closed class containing the smallest state index
    is selected, so repeated runs are reproducible. Residual under the full
    kernel is enforced below 1e-10.
    """
    matrix = _as_matrix(kernel)
    n = matrix.shape[0]
    if class_states is None:
        cls = _canonical_sink(matrix)
    else:
        cls = np.asarray(sorted(int(s) for s in class_states), dtype=np.int64)
        sub = matrix[cls][:, cls]
        leak = 1.0 - np.asarray(sub.sum(axis=1)).ravel()
        leaking = np.abs(leak) > ROW_SUM_TOL
        if leaking.any():
            raise ClosureError(
                f"class is not closed; leaking states {cls[leaking][:10].tolist()}"
            )
        # a closed but reducible class has no unique stationary measure;
        # narrow to its canonical sink so the solve is well-posed
        cls = _canonical_sink(matrix, restrict=cls)

    sub = sp.csr_matrix(matrix[cls][:, cls])
    m = len(cls)
    if m > DIRECT_SOLVE_LIMIT:
        mu_class = _power_iteration(sub)
    else:
        dense = sub.toarray()
        system = np.vstack([dense.T - np.eye(m), np.ones((1, m))])
        rhs = np.zeros(m + 1)
        rhs[-1] = 1.0
        mu_class, *_ = np.linalg.lstsq(system, rhs, rcond=None)
        if np.any(mu_class < -1e-12):
            mu_class = _power_iteration(sub)
        mu_class = np.clip(mu_class, 0.0, None)
        mu_class /= mu_class.sum()

    weights = np.zeros(n)
    weights[cls] = mu_class
    residual = float(np.abs(weights @ matrix - weights).sum())
    if residual > STATIONARY_TOL:
        mu_class = _power_iteration(sub, tol=1e-13)
        weights = np.zeros(n)
        weights[cls] = mu_class
        residual = float(np.abs(weights @ matrix - weights).sum())
        if residual > STATIONARY_TOL:
            raise NumericalError(f"stationary residual {residual:.2e} above {STATIONARY_TOL:g}")
    N, d = _meta(kernel, matrix)
    return MeasureOnBox(weights=weights, N=N, d=d, class_states=cls)


def stationary_residual(measure: MeasureOnBox, kernel) -> float:
    matrix = _as_matrix(kernel)
    return float(np.abs(measure.weights @ matrix - measure.weights).sum())


# -- density norms and the support bound ------------------------------------------


def density_norms(measure: MeasureOnBox, powers) -> dict[float, float]:
    """Normalized L^p norms of the density against uniform on the cube."""
    return {float(p): measure.norm(float(p)) for p in powers}


@dataclass
class SupportBoundReport:
    support_fraction: float
    bound: float
    p_prime: float
    p_dual: float
    norm_p_prime: float
    holds: bool


def support_bound_check(measure: MeasureOnBox, p_prime: float | None = None) -> SupportBoundReport:
    """Hoelder lower bound on the support fraction of a probability density.

    1 = E[Phi 1_{Phi>0}] <= ||Phi||_{p'} * fraction^(1/p''), so the support
    fraction is at least ||Phi||_{p'}^{-p''} with 1/p' + 1/p'' = 1. The
    default p' sits halfway between 1 and p = d/(d-1).
    """
    if p_prime is None:
        p = measure.d / (measure.d - 1)
        p_prime = (1.0 + p) / 2.0
    if p_prime <= 1.0:
        raise ConfigurationError("p' must exceed 1")
    p_dual = p_prime / (p_prime - 1.0)
    norm = measure.norm(p_prime)
    bound = norm ** (-p_dual)
    fraction = measure.support().size / measure.n_states
    return SupportBoundReport(
        support_fraction=float(fraction),
        bound=float(bound),
        p_prime=float(p_prime),
        p_dual=float(p_dual),
        norm_p_prime=float(norm),
        holds=bool(fraction >= bound - 1e-9),
    )


# -- conversion back to the original walk ------------------------------------------


@dataclass
class ConversionResult:
    measure: MeasureOnBox
    total_mass: float
    residual: float


def convert_to_original(
    measure: MeasureOnBox,
    environment: Environment,
    cap: int,
    chain: AugmentedChainResult | None = None,
) -> ConversionResult:
    """Turn a rescaled-chain stationary measure into an original-walk one.

    F(x) = sum_z H(z) * sum_{i<cap} P^z(X_i = x, T_1 > i) is exactly
    stationary for the reflected kernel whenever H is exactly stationary for
    the cap-truncated rescaled kernel (the truncation boundary terms cancel);
    its total mass is E_H[min(T_1, cap)]. Returns the normalized measure,
    that mass, and the L1 residual under the reflected kernel.
    """
    chain = chain if chain is not None else rescaled_kernel(environment, cap)
    if chain.cap != cap:
        raise ConfigurationError("cap disagrees with the supplied augmented chain")
    if chain.monte_carlo:
        raise ConfigurationError("conversion needs an exact chain; Monte Carlo occupation is partial")
    rescaled_residual = float(np.abs(measure.weights @ chain.y1 - measure.weights).sum())
    if rescaled_residual > 1e-8:
        raise PreconditionError(
            f"input measure is not stationary for the rescaled kernel (residual {rescaled_residual:.2e})"
        )
    raw = measure.weights @ chain.occupation
    total = float(raw.sum())
    weights = raw / total
    original = reflected_kernel(environment)
    support = np.flatnonzero(weights > 0)
    converted = MeasureOnBox(weights=weights, N=chain.N, d=chain.d, class_states=support)
    residual = stationary_residual(converted, original)
    return ConversionResult(measure=converted, total_mass=total, residual=residual)


def average_step_size(measure: MeasureOnBox, chain: AugmentedChainResult) -> float:
    """Root mean square of the truncated refresh time under the measure.

    The truncation must be the canonical floor(N/2) so that results are
    comparable across box sizes.
    """
    if chain.cap != chain.N // 2:
        raise ConfigurationError("average step size is defined at cap = floor(N/2)")
    if measure.weights.size != chain.t_second.size:
        raise ConfigurationError("measure and chain live on different cubes")
    return float(np.sqrt(measure.weights @ chain.t_second))
