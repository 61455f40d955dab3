"""Figure rendering for the CLI report path.

Each function takes result objects from the other modules, writes a single
PNG next to the delimited output, and returns the path it wrote. The Agg
backend is forced at import time so headless runs produce the same files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import ConfigurationError

DPI = 150


def _finish(fig, path) -> str:
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return str(path)


def survival_curve(estimate, path) -> str:
    """Tail plot of P(T_1 > m) on a log scale, with jackknife error bars."""
    grid = np.asarray(estimate.grid, dtype=np.float64)
    probs = np.asarray(estimate.probabilities, dtype=np.float64)
    errs = np.asarray(estimate.stderrs, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(5.5, 4))
    keep = probs > 0
    ax.errorbar(grid[keep], probs[keep], yerr=errs[keep], fmt="o-", ms=3.5, lw=1, capsize=2)
    if keep.sum() != keep.size:
        first_dead = grid[~keep].min()
        ax.axvline(first_dead, color="0.6", ls="--", lw=1, label="tail exhausted")
        ax.legend(fontsize=8)
    ax.set_yscale("log")
    ax.set_xlabel("m")
    ax.set_ylabel("P(T_1 > m)")
    ax.set_title(f"refresh-time tail, {estimate.mode}, {estimate.trials} trials", fontsize=10)
    ax.grid(True, alpha=0.3)
    return _finish(fig, path)


def density_heatmap(measure, path, *, label="stationary density") -> str:
    """Heatmap of a folded-box density. Two-dimensional boxes only."""
    if measure.d != 2:
        raise ConfigurationError("density heatmap needs d = 2")
    img = measure.density().reshape(measure.N, measure.N)
    fig, ax = plt.subplots(figsize=(5, 4.4))
    shown = ax.imshow(img.T, origin="lower", cmap="viridis", interpolation="nearest")
    fig.colorbar(shown, ax=ax, shrink=0.85, label=label)
    ax.set_xlabel("x_1 (folded)")
    ax.set_ylabel("x_2 (folded)")
    ax.set_title(f"N = {measure.N}, support {len(measure.support())}/{img.size}", fontsize=10)
    return _finish(fig, path)


def environment_map(base_env, path) -> str:
    """Axis-orientation map of a boxed d = 2 environment.

    Shows the fraction of one-step mass on the first axis per site; sites
    where a whole axis is dead show up saturated at 0 or 1.
    """
    if base_env.d != 2:
        raise ConfigurationError("environment map needs d = 2")
    hw = base_env.table
    frac = 2.0 * hw[..., 0]
    fig, ax = plt.subplots(figsize=(5, 4.4))
    shown = ax.imshow(frac.T, origin="lower", cmap="coolwarm", vmin=0, vmax=1,
                      interpolation="nearest")
    fig.colorbar(shown, ax=ax, shrink=0.85, label="mass fraction on axis 1")
    ax.set_xlabel("x_1")
    ax.set_ylabel("x_2")
    ax.set_title(f"{hw.shape[0]}x{hw.shape[1]} box", fontsize=10)
    return _finish(fig, path)


def trajectory_paths(trajectories, path) -> str:
    """Overlay of d = 2 lattice paths from their common or separate starts."""
    trajectories = list(trajectories)
    if any(np.asarray(t.start).size != 2 for t in trajectories):
        raise ConfigurationError("path overlay needs d = 2")
    fig, ax = plt.subplots(figsize=(5.2, 5))
    for traj in trajectories:
        steps = np.zeros((traj.axes.size + 1, 2), dtype=np.int64)
        moves = np.zeros((traj.axes.size, 2), dtype=np.int64)
        moves[np.arange(traj.axes.size), traj.axes] = traj.signs
        steps[0] = traj.start
        steps[1:] = traj.start + np.cumsum(moves, axis=0)
        ax.plot(steps[:, 0], steps[:, 1], lw=0.7, alpha=0.8)
        ax.plot(*traj.start, "k.", ms=5)
    ax.set_aspect("equal")
    ax.set_xlabel("x_1")
    ax.set_ylabel("x_2")
    ax.set_title(f"{len(trajectories)} walks", fontsize=10)
    ax.grid(True, alpha=0.3)
    return _finish(fig, path)


def norm_trend(records, path, *, p_label="p") -> str:
    """Scatter of density norms against box size with per-size medians.

    records: iterable of dicts with keys "N" and "norm".
    """
    sizes = np.array([r["N"] for r in records], dtype=np.float64)
    norms = np.array([r["norm"] for r in records], dtype=np.float64)
    if sizes.size == 0:
        raise ConfigurationError("norm trend needs at least one record")
    fig, ax = plt.subplots(figsize=(5.5, 4))
    distinct = np.unique(sizes)
    for n_val in distinct:
        sel = sizes == n_val
        jitter = np.linspace(-0.06, 0.06, sel.sum()) * n_val
        ax.plot(n_val + jitter, norms[sel], "o", ms=4, alpha=0.55, color="tab:blue")
    medians = [float(np.median(norms[sizes == n_val])) for n_val in distinct]
    ax.plot(distinct, medians, "s-", color="tab:red", ms=6, lw=1.5, label="median")
    ax.set_xscale("log", base=2)
    ax.set_xticks(distinct)
    ax.set_xticklabels([str(int(v)) for v in distinct])
    ax.set_xlabel("N")
    ax.set_ylabel(f"density L^{p_label} norm")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    return _finish(fig, path)


def covariance_summary(matrices, path, *, reference=None) -> str:
    """Per-instance covariance entries: each diagonal plus the worst off-diagonal."""
    mats = np.asarray(matrices, dtype=np.float64)
    if mats.ndim == 2:
        mats = mats[None]
    k, d = mats.shape[0], mats.shape[1]
    idx = np.arange(k)
    fig, ax = plt.subplots(figsize=(6, 4))
    for i in range(d):
        ax.plot(idx, mats[:, i, i], "o-", ms=4, lw=1, label=f"M[{i},{i}]")
    if d > 1:
        off = np.array([np.abs(m - np.diag(np.diag(m))).max() for m in mats])
        ax.plot(idx, off, "x--", ms=5, lw=1, color="0.4", label="max |off-diag|")
    if reference is not None:
        ax.axhline(reference, color="tab:red", ls=":", lw=1.2, label=f"reference {reference:g}")
    ax.set_xlabel("instance")
    ax.set_ylabel("covariance entry")
    ax.legend(fontsize=8, ncol=2)
    ax.grid(True, alpha=0.3)
    return _finish(fig, path)


def sink_map(decomposition, path) -> str:
    """Map of the folded box with each sink colored and transient sites gray."""
    graph = decomposition.graph
    if graph is None or graph.d != 2:
        raise ConfigurationError("sink map needs a d = 2 digraph")
    img = np.full(graph.shape, np.nan)
    for rank, cid in enumerate(decomposition.sink_ids):
        nodes = np.flatnonzero(decomposition.component_of == cid)
        img.reshape(-1)[nodes] = rank % 12
    fig, ax = plt.subplots(figsize=(5, 4.4))
    cmap = plt.get_cmap("Paired").copy()
    cmap.set_bad("0.88")
    ax.imshow(np.ma.masked_invalid(img.T), origin="lower", cmap=cmap,
              interpolation="nearest", vmin=0, vmax=11)
    ax.set_xlabel("x_1 (folded)")
    ax.set_ylabel("x_2 (folded)")
    n_sinks = len(decomposition.sink_ids)
    sizes = sorted((len(decomposition.components[c]) for c in decomposition.sink_ids), reverse=True)
    ax.set_title(f"{n_sinks} sinks, sizes {sizes[:6]}{'...' if n_sinks > 6 else ''}", fontsize=10)
    return _finish(fig, path)


def abp_scatter(records, path) -> str:
    """Sweep outcomes as lhs vs rhs; points above the diagonal violate the bound.

    records: the dict records produced by the maximum-principle sweep.
    """
    lhs = np.array([r["lhs"] for r in records], dtype=np.float64)
    rhs = np.array([r["rhs"] for r in records], dtype=np.float64)
    gated = np.array([r["precondition_estimate"] < 0.01 for r in records])
    fig, ax = plt.subplots(figsize=(5.5, 4.6))
    ax.plot(rhs[~gated], lhs[~gated], "o", ms=4, alpha=0.4, color="0.6",
            label=f"precondition failed ({int((~gated).sum())})")
    ax.plot(rhs[gated], lhs[gated], "o", ms=4, alpha=0.75, color="tab:blue",
            label=f"gated ({int(gated.sum())})")
    lims = [min(0.0, lhs.min(), rhs.min()), max(lhs.max(), rhs.max()) * 1.05 + 1e-9]
    ax.plot(lims, lims, "-", color="tab:red", lw=1, label="lhs = rhs")
    ax.set_xlim(lims)
    ax.set_xlabel("exposure bound (rhs)")
    ax.set_ylabel("interior excess (lhs)")
    violations = int((lhs[gated] > rhs[gated] + 1e-9).sum())
    ax.set_title(f"max-principle sweep, {violations} gated violations", fontsize=10)
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    return _finish(fig, path)


def ratio_histogram(ratios, path, *, xlabel="local max / p-mean ratio") -> str:
    vals = np.asarray(ratios, dtype=np.float64)
    finite = vals[np.isfinite(vals)]
    fig, ax = plt.subplots(figsize=(5.5, 4))
    if finite.size:
        ax.hist(finite, bins=min(25, max(5, finite.size // 3)), color="tab:blue", alpha=0.8)
        med = float(np.median(finite))
        ax.axvline(med, color="tab:red", lw=1.4, label=f"median {med:.3f}")
        ax.axvline(finite.max(), color="tab:orange", ls="--", lw=1.2,
                   label=f"max {finite.max():.3f}")
        ax.legend(fontsize=8)
    n_bad = int(vals.size - finite.size)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("count")
    ax.set_title(f"{vals.size} instances" + (f", {n_bad} non-finite" if n_bad else ""), fontsize=10)
    ax.grid(True, alpha=0.3)
    return _finish(fig, path)


def epoch_rates(comparison, path) -> str:
    """Bar chart of single-axis epoch frequency, demo chain against the baseline."""
    names = ["baseline", "test"]
    rates = [comparison["baseline_rate"], comparison["test_rate"]]
    counts = [comparison["n_baseline"], comparison["n_test"]]
    errs = [np.sqrt(max(r * (1 - r), 1e-12) / max(n, 1)) for r, n in zip(rates, counts)]
    fig, ax = plt.subplots(figsize=(4.4, 4))
    ax.bar(names, rates, yerr=errs, capsize=4, color=["0.6", "tab:blue"], width=0.55)
    for x, (r, n) in enumerate(zip(rates, counts)):
        ax.annotate(f"{r:.3f}\n(n={n})", (x, r), ha="center", va="bottom", fontsize=8,
                    xytext=(0, 4), textcoords="offset points")
    ax.set_ylabel("fraction of walks with a qualifying epoch")
    ax.set_ylim(0, max(max(rates) * 1.35, 0.05))
    ax.set_title(f"one-sided binomial p = {comparison['binomial_pvalue']:.2e}", fontsize=10)
    ax.grid(True, axis="y", alpha=0.3)
    return _finish(fig, path)
