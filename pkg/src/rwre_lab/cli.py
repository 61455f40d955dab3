"""Command-line harness: config handling, orchestration, persistence.

Every subcommand assembles its config from shipped defaults, an optional
JSON config file, and the seed/threads/out flags, runs the corresponding
pipeline, and writes results atomically under the output directory.
Payload files are deterministic for a fixed (config, seed): wall-clock
metadata is segregated into a `.meta.json` sidecar, and every payload
embeds the config hash and the package version. Exit codes: 0 ok, 1 bad
configuration, 2 resource budget exceeded, 3 acceptance failure, 4 other
internal error.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone

import numpy as np

from . import __version__, abp, acceptance, kernels, report, rng, sinks, stats, walk
from .env import (
    EnvSpec,
    PeriodizedEnvironment,
    ProceduralEnvironment,
    build_environment,
    save_environment,
    validate_environment,
)
from .errors import ConfigurationError, LabError, ResourceBudgetError

_SALT = 0xC11


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so exit codes stay ours."""

    def error(self, message):
        raise ConfigurationError(message)


DEFAULTS = {
    "gen-env": {
        "seed": 1,
        "env": {"variant": "random-direction", "d": 2},
        "shape": [16, 16],
    },
    "simulate": {
        "seed": 1,
        "env": {"variant": "random-direction", "d": 2},
        "trials": 8,
        "steps": 2000,
        "start": [0, 0],
    },
    "tails": {
        "seed": 1,
        "env": {"variant": "random-direction", "d": 2},
        "mode": "annealed",
        "trials": 100000,
        "grid": [1, 2, 3, 4, 6, 8, 12, 16, 24, 32],
        "powers": [1, 2],
    },
    "stationary": {
        "seed": 1,
        "env": {"variant": "random-direction", "d": 2},
        "N": 16,
        "cap": None,
        "mc_trials": 4000,
    },
    "sinks": {
        "seed": 1,
        "env": {"variant": "random-direction", "d": 2},
        "N": 16,
        "horizon": 100000,
        "trials_per_cell": 4,
    },
    "abp-sweep": {
        "seed": 1,
        "instances": 200,
        "d": 2,
    },
    "mean-value": {
        "seed": 1,
        "env": {"variant": "random-direction", "d": 2},
        "n_solves": 50,
        "radius": 32.0,
        "sigma": 0.5,
        "p": 1.0,
        "positive_boundary": True,
    },
    "clt": {
        "seed": 1,
        "env": {"variant": "random-direction", "d": 2},
        "env_seed": 1,
        "trials": 1000,
        "steps": 10000,
        "checkpoint_times": [5000, 10000],
        "write_rescaled_csv": True,
    },
    "noclt-demo": {
        "seed": acceptance.ACCEPTANCE_SEED,
        "n_walks": 100,
        "n_max": 6,
        "box": 256,
        "horizon": 100000,
        "beta": 0.1,
    },
    "all": {
        "seed": acceptance.ACCEPTANCE_SEED,
        "criteria": None,
    },
}


# -- config plumbing -----------------------------------------------------------


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigurationError(f"unknown config key {where!r}")
        if key == "env":
            # env specs carry variant-dependent keys; EnvSpec.from_dict validates
            out[key] = value
        elif isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = value
    return out


def resolve_threads(flag_value) -> int:
    if flag_value is not None:
        n = int(flag_value)
    else:
        n = int(os.environ.get("RWRE_LAB_THREADS", "1"))
    if n < 1:
        raise ConfigurationError("thread count must be at least 1")
    return n


def load_config(command: str, config_path, seed, out_dir) -> dict:
    cfg = copy.deepcopy(DEFAULTS[command])
    if config_path is not None:
        try:
            with open(config_path) as handle:
                file_cfg = json.load(handle)
        except OSError as exc:
            raise ConfigurationError(f"cannot read config file: {exc}")
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config file is not valid JSON: {exc}")
        if not isinstance(file_cfg, dict):
            raise ConfigurationError("config file must hold a JSON object")
        cfg = _merge(cfg, file_cfg)
    if seed is not None:
        cfg["seed"] = int(seed)
    cfg["out"] = out_dir if out_dir is not None else os.path.join("runs", command)
    return cfg


def config_hash(cfg: dict) -> str:
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        obj = float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        # keep payloads strict JSON; the string form is unambiguous
        return repr(obj)
    return obj


def write_payload(out_dir: str, name: str, command: str, cfg: dict, results: dict) -> str:
    """Atomic, deterministic JSON: temp file in place, then rename over."""
    os.makedirs(out_dir, exist_ok=True)
    cfg_for_hash = {k: v for k, v in cfg.items() if k != "out"}
    payload = {
        "command": command,
        "version": __version__,
        "config": _jsonable(cfg_for_hash),
        "config_hash": config_hash(_jsonable(cfg_for_hash)),
        "results": _jsonable(results),
    }
    text = json.dumps(payload, sort_keys=True, indent=2)
    path = os.path.join(out_dir, name)
    fd, tmp = tempfile.mkstemp(dir=out_dir, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_sidecar(out_dir: str, name: str, artifacts: list) -> str:
    meta = {
        "written_at": datetime.now(timezone.utc).isoformat(),
        "artifacts": sorted(artifacts),
    }
    path = os.path.join(out_dir, name)
    with open(path, "w") as handle:
        json.dump(meta, handle, indent=2)
        handle.write("\n")
    return path


class _SerialPool:
    def map(self, fn, items):
        return map(fn, items)


def parallel_map(fn, items, threads: int):
    """Deterministic map: results come back in submission order regardless
    of scheduling, so thread count never changes output."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _spec_from_cfg(cfg: dict) -> EnvSpec:
    return EnvSpec.from_dict(cfg["env"])


# -- subcommand implementations --------------------------------------------------


def _cmd_gen_env(cfg: dict, threads: int) -> int:
    spec = _spec_from_cfg(cfg)
    base = build_environment(spec, cfg["seed"], tuple(cfg["shape"]))
    validation = validate_environment(base)
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    env_path = os.path.join(out, "environment.json")
    save_environment(base, env_path)
    artifacts = [env_path]
    if base.d == 2:
        artifacts.append(report.environment_map(base, os.path.join(out, "environment_map.png")))
    results = {
        "env": spec.to_dict(),
        "seed": cfg["seed"],
        "shape": list(base.shape),
        "balanced": validation.balanced,
        "genuinely_d_dimensional": validation.genuinely_d_dimensional,
        "axis_positive_fraction": validation.axis_positive_fraction,
        "worst_balance_defect": validation.worst_balance_defect,
        "environment_file": os.path.basename(env_path),
    }
    artifacts.append(write_payload(out, "gen_env.json", "gen-env", cfg, results))
    write_sidecar(out, "gen_env.meta.json", artifacts)
    return 0


def _cmd_simulate(cfg: dict, threads: int) -> int:
    spec = _spec_from_cfg(cfg)
    env = ProceduralEnvironment(spec, seed=int(rng.key(cfg["seed"], _SALT, 0)))
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)

    def one(t: int):
        return walk.simulate(env, cfg["start"], cfg["steps"], seed=int(rng.key(cfg["seed"], _SALT, 1, t)))

    trajectories = parallel_map(one, range(cfg["trials"]), threads)
    artifacts = []
    for t, traj in enumerate(trajectories):
        path = os.path.join(out, f"trajectory_{t:03d}.csv")
        traj.to_csv(path)
        artifacts.append(path)
    finals = np.array([t.start + np.array([(t.signs * (t.axes == a)).sum() for a in range(spec.d)])
                       for t in trajectories])
    if spec.d == 2:
        artifacts.append(report.trajectory_paths(trajectories, os.path.join(out, "paths.png")))
    results = {
        "env": spec.to_dict(),
        "trials": cfg["trials"],
        "steps": cfg["steps"],
        "final_positions": finals,
        "mean_square_displacement": float(
            (((finals - np.asarray(cfg["start"])) ** 2).sum(axis=1)).mean()
        ),
    }
    artifacts.append(write_payload(out, "simulate.json", "simulate", cfg, results))
    write_sidecar(out, "simulate.meta.json", artifacts)
    return 0


def _cmd_tails(cfg: dict, threads: int) -> int:
    spec = _spec_from_cfg(cfg)
    mode = cfg["mode"]
    if mode == "quenched":
        target = ProceduralEnvironment(spec, seed=int(rng.key(cfg["seed"], _SALT, 2)))
    elif mode == "annealed":
        target = spec
    else:
        raise ConfigurationError(f"mode must be quenched or annealed, got {mode!r}")
    survival = walk.estimate_t1_survival(
        target, (0,) * spec.d, cfg["grid"], cfg["trials"],
        seed=int(rng.key(cfg["seed"], _SALT, 3)), mode=mode,
    )
    moments = {}
    for power in cfg["powers"]:
        est = walk.estimate_t1_moment(
            target, (0,) * spec.d, int(power), cfg["trials"],
            seed=int(rng.key(cfg["seed"], _SALT, 4, int(power))), mode=mode,
        )
        moments[str(power)] = est.to_dict()
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    artifacts = [report.survival_curve(survival, os.path.join(out, "survival.png"))]
    results = {"env": spec.to_dict(), "mode": mode, "survival": survival.to_dict(),
               "moments": moments}
    artifacts.append(write_payload(out, "tails.json", "tails", cfg, results))
    write_sidecar(out, "tails.meta.json", artifacts)
    return 0


def _cmd_stationary(cfg: dict, threads: int) -> int:
    spec = _spec_from_cfg(cfg)
    N = int(cfg["N"])
    cap = N // 2 if cfg["cap"] is None else int(cfg["cap"])
    base = build_environment(spec, cfg["seed"], (N,) * spec.d)
    chain = kernels.rescaled_kernel(base, cap)
    measure = kernels.stationary(chain.kernel())
    residual = kernels.stationary_residual(measure, chain.kernel())
    p = spec.d / (spec.d - 1)
    norms = kernels.density_norms(measure, [1.0, p, 2.0 * p])
    holder = kernels.support_bound_check(measure)
    conversion = kernels.convert_to_original(measure, base, cap, chain)
    results = {
        "env": spec.to_dict(),
        "N": N,
        "cap": cap,
        "stationary_residual": residual,
        "density_norms": {f"{k:g}": v for k, v in norms.items()},
        "support_fraction": holder.support_fraction,
        "holder_bound": holder.bound,
        "holder_holds": holder.holds,
        "conversion_mass": conversion.total_mass,
        "conversion_residual": conversion.residual,
        "rescaled_measure": measure.to_dict(),
        "converted_measure": conversion.measure.to_dict(),
    }
    if cap == N // 2:
        results["average_step_size"] = kernels.average_step_size(measure, chain)
    mc_trials = int(cfg["mc_trials"])
    if mc_trials > 0:
        gen = rng.generator(cfg["seed"], _SALT, N, cap)
        states = gen.choice(measure.weights.size, size=mc_trials, p=measure.weights)
        starts = np.stack(np.unravel_index(states, (N,) * spec.d), axis=-1).astype(np.int64)
        sample = walk.sample_refresh(
            PeriodizedEnvironment(base), starts, mc_trials,
            seed=int(rng.key(cfg["seed"], _SALT, N, cap)), cap=cap,
        )
        durations = sample.durations.astype(np.float64)
        err = float(durations.std(ddof=1) / np.sqrt(mc_trials))
        results["monte_carlo"] = {
            "trials": mc_trials,
            "mean_duration": float(durations.mean()),
            "stderr": err,
            "z_score": float((durations.mean() - conversion.total_mass) / max(err, 1e-12)),
        }
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    artifacts = []
    if spec.d == 2:
        artifacts.append(report.density_heatmap(
            measure, os.path.join(out, "density_rescaled.png"), label="rescaled density"))
        artifacts.append(report.density_heatmap(
            conversion.measure, os.path.join(out, "density_converted.png"),
            label="converted density"))
    artifacts.append(write_payload(out, "stationary.json", "stationary", cfg, results))
    write_sidecar(out, "stationary.meta.json", artifacts)
    return 0


def _cmd_sinks(cfg: dict, threads: int) -> int:
    spec = _spec_from_cfg(cfg)
    N = int(cfg["N"])
    base = build_environment(spec, cfg["seed"], (N,) * spec.d)
    graph = sinks.build_digraph(base)
    dec = sinks.scc_decompose(graph)
    uniqueness = sinks.uniqueness_diagnostic(base)
    kernel = kernels.reflected_kernel(base)
    supports = []
    for sink_id in dec.sink_ids:
        nodes = np.array(dec.components[sink_id], dtype=np.int64)
        measure = kernels.stationary(kernel, class_states=nodes)
        rep = sinks.support_vs_sinks(measure, dec)
        supports.append({
            "sink": int(sink_id),
            "size": int(nodes.size),
            "inside": rep.support_inside_sinks,
            "closed": rep.closure_ok,
        })
    coords = np.stack(
        np.meshgrid(*[np.arange(N)] * spec.d, indexing="ij"), axis=-1
    ).reshape(-1, spec.d)
    absorb = sinks.absorption_experiment(
        base, coords, horizon=int(cfg["horizon"]), trials=int(cfg["trials_per_cell"]),
        seed=int(rng.key(cfg["seed"], _SALT, 5)), decomposition=dec,
    )
    results = {
        "env": spec.to_dict(),
        "N": N,
        "n_components": len(dec.components),
        "n_sinks": len(dec.sink_ids),
        "sink_sizes": uniqueness.sink_sizes,
        "min_sink_distance": uniqueness.min_sink_distance,
        "supports": supports,
        "fraction_absorbed": absorb.fraction_absorbed,
        "absorption_quantiles": absorb.quantiles,
        "max_absorption_time": absorb.max_observed_time,
    }
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    artifacts = []
    if spec.d == 2:
        artifacts.append(report.sink_map(dec, os.path.join(out, "sink_map.png")))
    artifacts.append(write_payload(out, "sinks.json", "sinks", cfg, results))
    write_sidecar(out, "sinks.meta.json", artifacts)
    return 0


def _cmd_abp_sweep(cfg: dict, threads: int) -> int:
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        records = abp.max_principle_sweep(
            int(cfg["instances"]), seed=int(rng.key(cfg["seed"], _SALT, 6)),
            d=int(cfg["d"]), pool=pool,
        )
    finally:
        if pool is not None:
            pool.shutdown()
    gated = [r for r in records if r["precondition_estimate"] < 0.01]
    violations = [r for r in gated if not r["holds"]]
    results = {
        "n_instances": len(records),
        "n_gated": len(gated),
        "n_violations": len(violations),
        "records": records,
    }
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    artifacts = [report.abp_scatter(records, os.path.join(out, "sweep.png"))]
    artifacts.append(write_payload(out, "abp_sweep.json", "abp-sweep", cfg, results))
    write_sidecar(out, "abp_sweep.meta.json", artifacts)
    return 0


def _cmd_mean_value(cfg: dict, threads: int) -> int:
    spec = _spec_from_cfg(cfg)

    def one(i: int) -> dict:
        env = ProceduralEnvironment(spec, seed=int(rng.key(cfg["seed"], _SALT, 7, i, 0)))
        boundary = abp.random_boundary_values(
            int(rng.key(cfg["seed"], _SALT, 7, i, 1)), i,
            positive=bool(cfg["positive_boundary"]),
        )
        u = abp.harmonic_solve(env, (0,) * spec.d, float(cfg["radius"]), boundary)
        rep = abp.mean_value_check(
            u, (0,) * spec.d, float(cfg["radius"]), float(cfg["sigma"]), float(cfg["p"]))
        return {"instance": i, "ratio": rep.ratio, "lhs": rep.lhs,
                "rhs_norm": rep.rhs_norm, "residual": u.residual, "stranded": u.stranded}

    solves = parallel_map(one, range(int(cfg["n_solves"])), threads)
    ratios = np.array([s["ratio"] for s in solves])
    finite = ratios[np.isfinite(ratios)]
    results = {
        "env": spec.to_dict(),
        "sigma": cfg["sigma"],
        "p": cfg["p"],
        "n_solves": len(solves),
        "median_ratio": float(np.median(finite)) if finite.size else None,
        "max_ratio": float(finite.max()) if finite.size else None,
        "n_nonfinite": int(ratios.size - finite.size),
        "solves": solves,
    }
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    artifacts = [report.ratio_histogram(ratios, os.path.join(out, "ratios.png"))]
    artifacts.append(write_payload(out, "mean_value.json", "mean-value", cfg, results))
    write_sidecar(out, "mean_value.meta.json", artifacts)
    return 0


def _cmd_clt(cfg: dict, threads: int) -> int:
    spec = _spec_from_cfg(cfg)
    env = ProceduralEnvironment(spec, seed=int(cfg["env_seed"]))
    times = tuple(int(t) for t in cfg["checkpoint_times"])
    steps = int(cfg["steps"])
    if times and max(times) > steps:
        raise ConfigurationError("checkpoint beyond the trajectory length")
    ens = walk.simulate_ensemble(
        env, (0,) * spec.d, int(cfg["trials"]), steps,
        seed=int(rng.key(cfg["seed"], _SALT, 8)),
        keep_moves=True, checkpoint_times=times,
    )
    cov = stats.covariance_estimate(ens.final_positions, steps)
    gap_mean, n_gaps = walk.bulk_gap_mean(ens.axes, spec.d)
    bound = stats.diffusion_lower_bound_check(cov, gap_mean, n_gaps)
    checkpoints = np.stack([ens.checkpoints[t] for t in times], axis=1)
    gauss = stats.gaussianity_test(checkpoints, times)
    verdicts = {
        "off_diag_within_3se": bool(
            np.all(np.abs(cov.matrix - np.diag(np.diag(cov.matrix)))
                   <= 3 * cov.stderr + 1e-15)),
        "diag_positive": bool(np.all(np.diag(cov.matrix) > 0)),
        "diffusion_bound_holds": bound.holds,
        "ks_all_above_0.001": bool(np.all(gauss.ks_pvalue > 0.001)),
    }
    results = {
        "env": spec.to_dict(),
        "env_seed": cfg["env_seed"],
        "n": steps,
        "trials": cfg["trials"],
        "covariance": cov.matrix,
        "stderr": cov.stderr,
        "trace": cov.trace,
        "gap_mean": gap_mean,
        "ks": {
            "times": gauss.times,
            "statistic": gauss.ks_statistic,
            "pvalue": gauss.ks_pvalue,
            "increment_correlation": gauss.increment_correlation,
        },
        "verdicts": verdicts,
    }
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    artifacts = [report.covariance_summary(
        cov.matrix[None], os.path.join(out, "covariance.png"),
        reference=1.0 / spec.d if spec.variant == "uniform-srw" else None)]
    if cfg["write_rescaled_csv"]:
        csv_path = os.path.join(out, "rescaled.csv")
        with open(csv_path, "w") as handle:
            handle.write("t,coordinate,value\n")
            for ti, t in enumerate(times):
                scaled = checkpoints[:, ti, :] / np.sqrt(t)
                for a in range(spec.d):
                    for v in scaled[:, a]:
                        handle.write(f"{t},{a},{v!r}\n")
        artifacts.append(csv_path)
    artifacts.append(write_payload(out, "clt.json", "clt", cfg, results))
    write_sidecar(out, "clt.meta.json", artifacts)
    return 0


def _cmd_noclt_demo(cfg: dict, threads: int) -> int:
    seed = int(cfg["seed"])
    horizon = int(cfg["horizon"])
    n_walks = int(cfg["n_walks"])
    box = int(cfg["box"])
    grid_top = min(horizon, 100000)
    t_grid = np.unique(np.round(np.logspace(2, np.log10(grid_top), 31)).astype(np.int64))
    t_grid = t_grid[(t_grid >= 1) & (t_grid <= horizon)]
    if t_grid.size == 0:
        raise ConfigurationError("horizon too short for the epoch time grid")
    boxed = build_environment(
        EnvSpec.noclt_2d(int(cfg["n_max"])), int(rng.key(seed, _SALT, 9, 0)), (box, box))
    test_env = PeriodizedEnvironment(boxed)
    ens_test = walk.simulate_ensemble(
        test_env, (box // 2, box // 2), n_walks, horizon,
        seed=int(rng.key(seed, _SALT, 9, 1)), keep_moves=True,
    )
    base_env = ProceduralEnvironment(EnvSpec.uniform_srw(2), seed=int(rng.key(seed, _SALT, 9, 2)))
    ens_base = walk.simulate_ensemble(
        base_env, (0, 0), n_walks, horizon,
        seed=int(rng.key(seed, _SALT, 9, 3)), keep_moves=True,
    )
    beta = float(cfg["beta"])
    flags_test = np.array([stats.epoch_detector(ens_test.axes[t], beta, t_grid).any_epoch
                           for t in range(n_walks)])
    flags_base = np.array([stats.epoch_detector(ens_base.axes[t], beta, t_grid).any_epoch
                           for t in range(n_walks)])
    comparison = stats.epoch_frequency_comparison(flags_test, flags_base)
    results = {"beta": beta, "t_grid": t_grid, "comparison": comparison,
               "significant": bool(comparison["binomial_pvalue"] < 0.01)}
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    artifacts = [report.epoch_rates(comparison, os.path.join(out, "epoch_rates.png"))]
    artifacts.append(write_payload(out, "noclt_demo.json", "noclt-demo", cfg, results))
    write_sidecar(out, "noclt_demo.meta.json", artifacts)
    return 0


def _cmd_all(cfg: dict, threads: int) -> int:
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        summary = acceptance.run_all(int(cfg["seed"]), subset=cfg["criteria"], pool=pool)
    finally:
        if pool is not None:
            pool.shutdown()
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    artifacts = []
    by_number = {rec["criterion"]: rec for rec in summary["criteria"]}
    if 2 in by_number:
        mats = np.array([e["matrix"] for e in by_number[2]["environments"]])
        artifacts.append(report.covariance_summary(mats, os.path.join(out, "covariances.png")))
    if 4 in by_number:
        recs = [{"N": r["N"], "norm": r["norm"]} for r in by_number[4]["instances"]]
        artifacts.append(report.norm_trend(recs, os.path.join(out, "norm_trend.png"),
                                           p_label="d/(d-1)"))
    if 5 in by_number:
        artifacts.append(report.abp_scatter(by_number[5]["records"],
                                            os.path.join(out, "abp_sweep.png")))
    if 6 in by_number:
        ratios = [s["ratio"] for s in by_number[6]["solves"]]
        artifacts.append(report.ratio_histogram(ratios, os.path.join(out, "ratios.png")))
    if 9 in by_number:
        artifacts.append(report.epoch_rates(by_number[9]["comparison"],
                                            os.path.join(out, "epoch_rates.png")))
    artifacts.append(write_payload(out, "acceptance.json", "all", cfg, summary))
    write_sidecar(out, "acceptance.meta.json", artifacts)
    for rec in summary["criteria"]:
        status = "pass" if rec["passed"] else "FAIL"
        print(f"criterion {rec['criterion']} ({rec['name']}): {status}  "
              f"[{rec['runtime_s']:.1f}s]")
    print(f"{summary['n_passed']}/{summary['n_run']} criteria passed")
    return 0 if summary["all_passed"] else 3


_COMMANDS = {
    "gen-env": _cmd_gen_env,
    "simulate": _cmd_simulate,
    "tails": _cmd_tails,
    "stationary": _cmd_stationary,
    "sinks": _cmd_sinks,
    "abp-sweep": _cmd_abp_sweep,
    "mean-value": _cmd_mean_value,
    "clt": _cmd_clt,
    "noclt-demo": _cmd_noclt_demo,
    "all": _cmd_all,
}


def build_parser() -> _Parser:
    parser = _Parser(prog="rwre-lab", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="JSON config overriding the defaults")
        p.add_argument("--seed", type=int, default=None, help="master seed")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (fallback: RWRE_LAB_THREADS, then 1)")
        p.add_argument("--out", default=None, help="output directory (default runs/<command>)")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        threads = resolve_threads(args.threads)
        cfg = load_config(args.command, args.config, args.seed, args.out)
        return _COMMANDS[args.command](cfg, threads)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except ResourceBudgetError as exc:
        print(f"resource budget exceeded: {exc}", file=sys.stderr)
        return 2
    except LabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except Exception:
        import traceback

        traceback.print_exc()
        return 4


if __name__ == "__main__":
    sys.exit(main())
