"""Balanced random environments on the integer lattice.

A site's nearest-neighbor transition law is stored as d half-weights, one per
axis: the full law assigns half_weights[i] to both +e_i and -e_i, so the law
is balanced by construction and unbalanced environments are unrepresentable.
Environments come in three kinds: boxed (an explicit table over a finite
box), procedural (i.i.d. site laws keyed on (master seed, site), defined on
all of Z^d without materialization), and periodized (reflect-periodic
extension of a boxed cube to all of Z^d).
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaincinv

from . import rng
from .errors import ConfigurationError, DomainError, ResourceBudgetError

BALANCE_TOL = 1e-12
_TABLE_BUDGET_BYTES = 2 << 30

VARIANTS = ("uniform-srw", "random-direction", "elliptic-dirichlet", "finite-mixture", "noclt-2d")


def normalize_half_weights(values, *, tol: float = BALANCE_TOL) -> np.ndarray:
    """Validate and renormalize a half-weight vector.

    The full law must sum to 1, i.e. the half-weights to 1/2, within `tol`;
    anything further off is rejected rather than silently rescaled.
    """
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ConfigurationError("half-weights must be a non-empty 1-d vector")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ConfigurationError(f"half-weights must be finite and non-negative, got {arr!r}")
    total = 2.0 * float(arr.sum())
    if abs(total - 1.0) > tol:
        raise ConfigurationError(
            f"half-weights sum to {arr.sum()!r}, expected 0.5 within {tol:g}"
        )
    return arr / total


class LocalLaw:
    """Transition law of a single site, stored as per-axis half-weights."""

    __slots__ = ("half_weights",)

    def __init__(self, half_weights):
        hw = normalize_half_weights(half_weights)
        hw.setflags(write=False)
        self.half_weights = hw

    @property
    def d(self) -> int:
        return self.half_weights.size

    def full_law(self) -> np.ndarray:
        """Probabilities of the 2d moves, ordered +e_0, -e_0, +e_1, -e_1, ..."""
        return np.repeat(self.half_weights, 2)

    def __eq__(self, other) -> bool:
        return isinstance(other, LocalLaw) and np.array_equal(self.half_weights, other.half_weights)

    def __hash__(self):
        return hash(self.half_weights.tobytes())

    def __repr__(self) -> str:
        return f"LocalLaw({self.half_weights.tolist()})"


@dataclass(frozen=True)
class EnvSpec:
    """Declarative description of a site-law distribution.

    variant: one of VARIANTS. `alpha` parametrizes elliptic-dirichlet,
    `atoms` (law, weight pairs) finite-mixture, `n_max` noclt-2d.
    """

    variant: str
    d: int
    alpha: tuple[float, ...] | None = None
    atoms: tuple[tuple[LocalLaw, float], ...] | None = None
    n_max: int | None = None

    # -- constructors ----------------------------------------------------

    @classmethod
    def uniform_srw(cls, d: int = 2) -> "EnvSpec":
        return cls("uniform-srw", d)

    @classmethod
    def random_direction(cls, d: int = 2) -> "EnvSpec":
        return cls("random-direction", d)

    @classmethod
    def elliptic_dirichlet(cls, alpha) -> "EnvSpec":
        alpha = tuple(float(a) for a in alpha)
        return cls("elliptic-dirichlet", len(alpha), alpha=alpha)

    @classmethod
    def finite_mixture(cls, atoms) -> "EnvSpec":
        pairs = tuple((law if isinstance(law, LocalLaw) else LocalLaw(law), float(w)) for law, w in atoms)
        if not pairs:
            raise ConfigurationError("finite-mixture needs at least one atom")
        return cls("finite-mixture", pairs[0][0].d, atoms=pairs)

    @classmethod
    def noclt_2d(cls, n_max: int) -> "EnvSpec":
        return cls("noclt-2d", 2, n_max=int(n_max))

    # -- validation -------------------------------------------------------

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown environment variant {self.variant!r}")
        if self.d < 2:
            raise ConfigurationError("environments must be at least 2-dimensional")
        if self.variant == "elliptic-dirichlet":
            if self.alpha is None or len(self.alpha) != self.d:
                raise ConfigurationError("elliptic-dirichlet needs one alpha per axis")
            if any(a <= 0 for a in self.alpha):
                raise ConfigurationError("dirichlet parameters must be positive")
        if self.variant == "finite-mixture":
            if not self.atoms:
                raise ConfigurationError("finite-mixture needs atoms")
            if any(law.d != self.d for law, _ in self.atoms):
                raise ConfigurationError("mixture atoms must share the spec dimension")
            weights = np.array([w for _, w in self.atoms])
            if np.any(weights < 0) or abs(weights.sum() - 1.0) > BALANCE_TOL:
                raise ConfigurationError("mixture weights must be non-negative and sum to 1")
            # Genuine d-dimensionality: every axis must get positive weight
            # under some atom that the mixture actually selects.
            for i in range(self.d):
                if not any(w > 0 and law.half_weights[i] > 0 for law, w in self.atoms):
                    raise ConfigurationError(f"axis {i} has zero weight under every mixture atom")
        if self.variant == "noclt-2d":
            if self.d != 2:
                raise ConfigurationError("noclt-2d is a planar construction")
            if self.n_max is None or self.n_max < 0:
                raise ConfigurationError("noclt-2d needs n_max >= 0")

    @property
    def is_single_site_iid(self) -> bool:
        return self.variant != "noclt-2d"

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        out = {"variant": self.variant, "d": self.d}
        if self.alpha is not None:
            out["alpha"] = list(self.alpha)
        if self.atoms is not None:
            out["atoms"] = [
                {"half_weights": law.half_weights.tolist(), "weight": w} for law, w in self.atoms
            ]
        if self.n_max is not None:
            out["n_max"] = self.n_max
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "EnvSpec":
        try:
            variant = data["variant"]
            d = int(data["d"])
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"malformed environment spec: {data!r}") from exc
        alpha = tuple(data["alpha"]) if "alpha" in data else None
        atoms = None
        if "atoms" in data:
            atoms = tuple((LocalLaw(a["half_weights"]), float(a["weight"])) for a in data["atoms"])
        n_max = int(data["n_max"]) if "n_max" in data else None
        spec = cls(variant, d, alpha=alpha, atoms=atoms, n_max=n_max)
        spec.validate()
        return spec


# -- keyed sampling of site laws -----------------------------------------


def _site_keys(spec: EnvSpec, seed: int, sites: np.ndarray, trial_ids=None) -> np.ndarray:
    base = rng.key(seed, rng.LABEL_SITE)
    columns = [sites[..., i] for i in range(spec.d)]
    if trial_ids is not None:
        columns.append(trial_ids)
    return rng.key_mixin(base, *columns)


def sample_laws(spec: EnvSpec, seed: int, sites, trial_ids=None) -> np.ndarray:
    """Half-weights for an array of sites, shape (..., d) -> (..., d).

    Deterministic in (spec, seed, site); with `trial_ids`, in (spec, seed,
    site, trial) — the annealed mode where each trial sees a fresh
    environment. Disjoint sites are independent by construction.
    """
    spec.validate()
    if not spec.is_single_site_iid:
        raise ConfigurationError("noclt-2d has no single-site law; build a boxed environment")
    sites = np.asarray(sites, dtype=np.int64)
    if sites.shape[-1] != spec.d:
        raise ConfigurationError(f"sites have dimension {sites.shape[-1]}, spec has d={spec.d}")
    lead = sites.shape[:-1]
    d = spec.d

    if spec.variant == "uniform-srw":
        return np.full(lead + (d,), 1.0 / (2 * d))

    keys = _site_keys(spec, seed, sites, trial_ids)

    if spec.variant == "random-direction":
        axis = np.minimum((rng.u01(keys, 0) * d).astype(np.int64), d - 1)
        out = np.zeros(lead + (d,))
        np.put_along_axis(out, axis[..., None], 0.5, axis=-1)
        return out

    if spec.variant == "elliptic-dirichlet":
        gammas = np.empty(lead + (d,))
        for i in range(d):
            u = rng.u01(keys, i)
            gammas[..., i] = gammaincinv(spec.alpha[i], u)
        total = gammas.sum(axis=-1, keepdims=True)
        return gammas / (2.0 * total)

    # finite-mixture
    weights = np.array([w for _, w in spec.atoms])
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    idx = np.searchsorted(cumulative, rng.u01(keys, 0), side="right")
    idx = np.minimum(idx, len(spec.atoms) - 1)
    atom_table = np.stack([law.half_weights for law, _ in spec.atoms])
    return atom_table[idx]


def sample_local_law(spec: EnvSpec, seed: int, z) -> LocalLaw:
    """The law a procedural environment with this spec assigns to site z."""
    z = np.asarray(z, dtype=np.int64)
    return LocalLaw(sample_laws(spec, seed, z[None, :])[0])


# -- folding ---------------------------------------------------------------


def fold_point(z, N: int) -> np.ndarray:
    """Reflect-periodic fold of lattice points into [0, N)^d, coordinatewise.

    g(x) = min(x mod 2N, 2N - 1 - (x mod 2N)): 2N-periodic, and within the
    base period [0, 2N) the upper half mirrors the lower half.
    """
    if N < 1:
        raise ConfigurationError("fold requires N >= 1")
    z = np.asarray(z, dtype=np.int64)
    r = np.mod(z, 2 * N)
    return np.minimum(r, 2 * N - 1 - r)


# -- environment kinds ------------------------------------------------------


class Environment:
    """Common interface: `d`, and vectorized half-weight lookup."""

    d: int

    def half_weights_at(self, sites: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def law_at(self, z) -> LocalLaw:
        z = np.asarray(z, dtype=np.int64)
        return LocalLaw(self.half_weights_at(z[None, :])[0])

    def half_weights_block(self, origin, shape) -> np.ndarray:
        """Laws on the box origin + [0, shape), returned as (*shape, d)."""
        origin = np.asarray(origin, dtype=np.int64)
        shape = tuple(int(s) for s in shape)
        grids = np.meshgrid(*[origin[i] + np.arange(shape[i]) for i in range(self.d)], indexing="ij")
        sites = np.stack(grids, axis=-1).reshape(-1, self.d)
        return self.half_weights_at(sites).reshape(shape + (self.d,))


class BoxedEnvironment(Environment):
    """Explicit half-weight table over the box [0, shape)."""

    def __init__(self, table: np.ndarray, spec: EnvSpec | None = None, seed: int | None = None):
        table = np.ascontiguousarray(table, dtype=np.float64)
        if table.ndim < 2:
            raise ConfigurationError("boxed environment table must be (*shape, d)")
        self.table = table
        self.shape = table.shape[:-1]
        self.d = table.shape[-1]
        self.spec = spec
        self.seed = seed
        if len(self.shape) != self.d:
            raise ConfigurationError(
                f"table has {len(self.shape)} spatial axes but d={self.d} half-weights"
            )
        sums = 2.0 * table.sum(axis=-1)
        if np.any(table < 0) or np.max(np.abs(sums - 1.0)) > 1e-9:
            raise ConfigurationError("boxed environment contains invalid laws")

    def half_weights_at(self, sites: np.ndarray) -> np.ndarray:
        sites = np.asarray(sites, dtype=np.int64)
        shape = np.asarray(self.shape, dtype=np.int64)
        bad = np.any((sites < 0) | (sites >= shape), axis=-1)
        if np.any(bad):
            offender = sites[bad][0] if sites.ndim > 1 else sites
            raise DomainError(f"site {offender.tolist()} outside boxed environment {self.shape}")
        flat = np.ravel_multi_index(tuple(np.moveaxis(sites, -1, 0)), self.shape)
        return self.table.reshape(-1, self.d)[flat]

    def half_weights_block(self, origin, shape) -> np.ndarray:
        origin = np.asarray(origin, dtype=np.int64)
        if np.any(origin < 0) or np.any(origin + np.asarray(shape) > np.asarray(self.shape)):
            raise DomainError("requested block leaves the boxed environment")
        slices = tuple(slice(int(origin[i]), int(origin[i]) + int(shape[i])) for i in range(self.d))
        return self.table[slices]


class ProceduralEnvironment(Environment):
    """I.i.d. site laws on all of Z^d, keyed on (master seed, site)."""

    def __init__(self, spec: EnvSpec, seed: int):
        spec.validate()
        if not spec.is_single_site_iid:
            raise ConfigurationError("noclt-2d cannot be procedural; build a boxed environment")
        self.spec = spec
        self.seed = int(seed)
        self.d = spec.d

    def half_weights_at(self, sites: np.ndarray) -> np.ndarray:
        return sample_laws(self.spec, self.seed, sites)


class PeriodizedEnvironment(Environment):
    """Reflect-periodic extension of a boxed cube of side N to all of Z^d."""

    def __init__(self, base: BoxedEnvironment):
        sides = set(base.shape)
        if len(sides) != 1:
            raise ConfigurationError("periodization needs a cubic base box")
        self.base = base
        self.N = base.shape[0]
        self.d = base.d

    def half_weights_at(self, sites: np.ndarray) -> np.ndarray:
        return self.base.half_weights_at(fold_point(sites, self.N))


def build_environment(spec: EnvSpec, seed: int, domain) -> Environment:
    """Materialize `spec` on `domain`.

    domain = "procedural" gives a lazily sampled environment on all of Z^d;
    a shape tuple gives a boxed table whose law_at agrees pointwise with
    sample_local_law under the same seed.
    """
    spec.validate()
    if isinstance(domain, str):
        if domain != "procedural":
            raise ConfigurationError(f"unknown domain {domain!r}")
        return ProceduralEnvironment(spec, seed)
    shape = tuple(int(s) for s in domain)
    if len(shape) != spec.d or any(s < 1 for s in shape):
        raise ConfigurationError(f"domain shape {shape} incompatible with d={spec.d}")
    cells = int(np.prod(shape))
    if cells * spec.d * 8 > _TABLE_BUDGET_BYTES:
        raise ResourceBudgetError(
            f"boxed table for shape {shape} exceeds the memory budget; use domain='procedural'"
        )
    if spec.variant == "noclt-2d":
        return build_noclt_environment(seed, spec.n_max, shape)
    grids = np.meshgrid(*[np.arange(s) for s in shape], indexing="ij")
    sites = np.stack(grids, axis=-1).reshape(-1, spec.d)
    table = sample_laws(spec, seed, sites).reshape(shape + (spec.d,))
    return BoxedEnvironment(table, spec=spec, seed=int(seed))


# -- the planar marker construction ----------------------------------------

# Dominant-direction probabilities: a vertical marker at level n claims the
# 2^n sites directly above it with vertical probability 1 - e^(-2n); a
# horizontal marker claims the 2^n sites directly to the right with
# horizontal probability 1 - e^(-(2n+1)). Conflicts take the largest claimed
# value, vertical winning ties (the parities make actual ties impossible).
_VERTICAL, _HORIZONTAL = 1, 0


def _marker_field(seed: int, n: int, orientation: int, x0, y0, shape) -> np.ndarray:
    base = rng.key(seed, rng.LABEL_MARKER, n, orientation)
    xs = x0 + np.arange(shape[0])
    ys = y0 + np.arange(shape[1])
    keys = rng.key_mixin(base, xs[:, None], ys[None, :])
    return rng.u01(keys, 0) < 3.0 ** (-n)


def _covered_by_run(markers: np.ndarray, run: int, axis: int) -> np.ndarray:
    """Sites covered by a marker in the `run` cells strictly before them along `axis`.

    Input is padded with `run` extra cells on the low side of `axis`, so
    input cell j corresponds to output position j - run; output[y] reports
    whether any of input cells y .. y+run-1 (= positions y-run .. y-1) is
    marked. Output drops the padding.
    """
    out_len = markers.shape[axis] - run
    counts = np.cumsum(markers.astype(np.int64), axis=axis)

    def along(a_slice):
        idx = [slice(None)] * markers.ndim
        idx[axis] = a_slice
        return counts[tuple(idx)]

    windows = along(slice(run - 1, run - 1 + out_len)).copy()
    sub = [slice(None)] * markers.ndim
    sub[axis] = slice(1, None)
    windows[tuple(sub)] -= along(slice(0, out_len - 1))
    return windows > 0


def build_noclt_environment(seed: int, n_max: int, shape) -> BoxedEnvironment:
    """Boxed planar environment with heavy single-axis corridors.

    Independent Bernoulli(3^-n) markers per site, level, and orientation;
    each marker claims a run of 2^n sites (above for vertical, to the right
    for horizontal) at stronger and stronger dominant-direction weight.
    Unclaimed sites stay at (1/4, 1/4). Truncating at n_max keeps the
    construction genuinely 2-dimensional and elliptic, with ellipticity
    constant e^(-2*n_max - 1)/2.
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) != 2 or min(shape) < 1:
        raise ConfigurationError("noclt environment needs a 2-d box")
    if n_max < 0:
        raise ConfigurationError("n_max must be >= 0")
    W, H = shape
    best_value = np.zeros(shape)
    best_orientation = np.full(shape, -1, dtype=np.int8)

    claims = []
    for n in range(1, n_max + 1):
        claims.append((1.0 - np.exp(-2.0 * n), _VERTICAL, n))
        claims.append((1.0 - np.exp(-(2.0 * n + 1.0)), _HORIZONTAL, n))
    # Ascending value; vertical after horizontal at equal value so vertical
    # would win a tie. (Values are provably distinct, so this is latent.)
    claims.sort(key=lambda c: (c[0], c[1]))

    for value, orientation, n in claims:
        run = 2**n
        if orientation == _VERTICAL:
            markers = _marker_field(seed, n, _VERTICAL, 0, -run, (W, H + run))
            covered = _covered_by_run(markers, run, axis=1)
        else:
            markers = _marker_field(seed, n, _HORIZONTAL, -run, 0, (W + run, H))
            covered = _covered_by_run(markers, run, axis=0)
        best_value[covered] = value
        best_orientation[covered] = orientation

    table = np.full(shape + (2,), 0.25)
    vertical = best_orientation == _VERTICAL
    horizontal = best_orientation == _HORIZONTAL
    table[vertical, 1] = best_value[vertical] / 2.0
    table[vertical, 0] = (1.0 - best_value[vertical]) / 2.0
    table[horizontal, 0] = best_value[horizontal] / 2.0
    table[horizontal, 1] = (1.0 - best_value[horizontal]) / 2.0
    return BoxedEnvironment(table, spec=EnvSpec.noclt_2d(n_max), seed=int(seed))


# -- validation -------------------------------------------------------------


@dataclass
class EnvValidationReport:
    balanced: bool
    genuinely_d_dimensional: bool
    axis_positive_fraction: np.ndarray
    worst_balance_defect: float
    offending_sites: list

    @property
    def ok(self) -> bool:
        return self.balanced and self.genuinely_d_dimensional


def validate_environment(env: Environment, origin=None, shape=None) -> EnvValidationReport:
    """Check balance and genuine d-dimensionality over a finite box.

    Boxed environments default to their own box; procedural and periodized
    environments need an explicit (origin, shape) window.
    """
    if shape is None:
        if isinstance(env, BoxedEnvironment):
            origin, shape = (0,) * env.d, env.shape
        elif isinstance(env, PeriodizedEnvironment):
            origin, shape = (0,) * env.d, env.base.shape
        else:
            raise ConfigurationError("procedural environments need an explicit validation box")
    if origin is None:
        origin = (0,) * env.d
    table = env.half_weights_block(origin, shape)
    flat = table.reshape(-1, env.d)
    defects = np.abs(2.0 * flat.sum(axis=1) - 1.0)
    bad = (defects > 1e-9) | np.any(flat < 0, axis=1)
    axis_fraction = (flat > 0).mean(axis=0)
    coords = np.argwhere(bad.reshape(shape)) + np.asarray(origin)
    return EnvValidationReport(
        balanced=not bool(bad.any()),
        genuinely_d_dimensional=bool(np.all(axis_fraction > 0)),
        axis_positive_fraction=axis_fraction,
        worst_balance_defect=float(defects.max()) if defects.size else 0.0,
        offending_sites=[tuple(int(c) for c in row) for row in coords[:20]],
    )


# -- JSON persistence --------------------------------------------------------


def save_environment(env: BoxedEnvironment, path: str) -> None:
    """Write a boxed environment as JSON; round-trips binary64 exactly."""
    if not isinstance(env, BoxedEnvironment):
        raise ConfigurationError("only boxed environments are serialized")
    payload = {
        "d": env.d,
        "shape": list(env.shape),
        "laws": env.table.reshape(-1, env.d).tolist(),
        "spec": env.spec.to_dict() if env.spec is not None else None,
        "seed": env.seed,
    }
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            json.dump(payload, handle)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_environment(path: str) -> BoxedEnvironment:
    with open(path) as handle:
        payload = json.load(handle)
    try:
        d = int(payload["d"])
        shape = tuple(int(s) for s in payload["shape"])
        laws = np.asarray(payload["laws"], dtype=np.float64).reshape(shape + (d,))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"malformed environment file {path}") from exc
    spec = EnvSpec.from_dict(payload["spec"]) if payload.get("spec") else None
    return BoxedEnvironment(laws, spec=spec, seed=payload.get("seed"))
