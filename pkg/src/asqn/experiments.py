"""Experiment driver: configuration, dataset ingestion, and sweep orchestration.

Configurations are JSON documents with a strict schema (unknown keys are
rejected).  Named presets mirror the published hyperparameter tables for
the linear Gaussian and ML-1M settings and can be overridden key by key.
Traces are written one CSV per (algorithm, sweep value, repetition) plus a
JSON summary aggregating time-to-epsilon / final RMSE across repetitions.
"""

from __future__ import annotations

import copy
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError
from .model import LinearGaussianModel, MatrixFactorizationModel, potential, rmse
from .sampler import MbLbfgsMaster, SamplerConfig, sgld_step
from .simulator import (
    SimConfig,
    SimResult,
    TraceRecord,
    run_async,
    run_sync_mb,
    time_to_epsilon,
    write_trace_csv,
)
from . import runtime as rt

ALGORITHMS = ("as-lbfgs", "a-sgd", "mb-lbfgs-simplified", "sgld")

# Published hyperparameters for the synthetic linear Gaussian setting:
# sampler (h', gamma', beta, M) plus the simulator timing table
# (mu_m, mu_w per algorithm; tau = 10; N_Omega = N_Y/100, N_O = N_Omega/3).
PRESETS = {
    "linear-gaussian-paper": {
        "schema_version": 1,
        "mode": "simulate",
        "algorithms": ["as-lbfgs"],
        "problem": {
            "type": "linear-gaussian",
            "seed": 0,
            "dim": 100,
            "n_records": 600,
            "noise_variance": 10.0,
            "correlation": 3.0,
        },
        "sampler": {
            "step": 4e-4,
            "friction": 3e-2,
            "inv_temperature": 5e2,
            "memory_size": 3,
            "n_s": 4,
            "n_o": 2,
            "epsilon": 1e-8,
            "rho": 0.0,
        },
        "baselines": {
            "a-sgd": {"step": 1e-3},
            "mb-lbfgs-simplified": {"step": 5e-2, "memory_size": 3, "rho": 0.0},
            "sgld": {"step": 1e-3},
        },
        "sim": {
            "workers": 10,
            "sigma_worker": 0.0,
            "comm_time": 10.0,
            "timeout": 10.0,
            "max_updates": 40000,
            "sample_every": 25,
            "timing": {
                "as-lbfgs": {"mu_master": 0.0, "mu_worker": 70.0},
                "a-sgd": {"mu_master": 0.0, "mu_worker": 10.0},
                "mb-lbfgs-simplified": {"mu_master": 30.0, "mu_worker": 10.0},
                "sgld": {"mu_master": 0.0, "mu_worker": 10.0},
            },
        },
        "runtime": {"workers": 4, "max_updates": 20000, "sample_every": 100},
        "sweep": {},
        "repetitions": 1,
        "epsilon_accuracy": 1e-2,
        "base_seed": 0,
        "output_dir": "out",
    },
    "ml-1m-paper": {
        "schema_version": 1,
        "mode": "simulate",
        "algorithms": ["as-lbfgs"],
        "problem": {
            "type": "matrix-factorization",
            "seed": 0,
            "rank": 5,
            "path": None,
            "format": "dat-double-colon",
            "max_ratings": 100000,
        },
        "sampler": {
            "step": 2e-8,
            "friction": 1e-1,
            "inv_temperature": 1e3,
            "memory_size": 3,
            "n_s": None,  # filled from N_Y: N_Omega = N_Y/100, N_O = N_Omega/3
            "n_o": None,
            # the quartic landscape has near-flat directions whose noisy
            # curvature pairs would seed the inverse-Hessian with a huge
            # scale; a strong cautious threshold keeps them out
            "epsilon": 0.1,
            "rho": 3.0,
        },
        "baselines": {
            "a-sgd": {"step": 1e-6},
            "mb-lbfgs-simplified": {"step": 5e-7, "memory_size": 3, "rho": 3.0},
            "sgld": {"step": 1e-6},
        },
        "sim": {
            "workers": 10,
            "sigma_worker": 0.0,
            "comm_time": 10.0,
            "timeout": 400.0,
            "max_updates": 3000,
            "sample_every": 50,
            "timing": {
                "as-lbfgs": {"mu_master": 0.0, "mu_worker": 70.0},
                "a-sgd": {"mu_master": 0.0, "mu_worker": 10.0},
                "mb-lbfgs-simplified": {"mu_master": 30.0, "mu_worker": 10.0},
                "sgld": {"mu_master": 0.0, "mu_worker": 10.0},
            },
        },
        "runtime": {"workers": 4, "max_updates": 3000, "sample_every": 50},
        "sweep": {},
        "repetitions": 1,
        "epsilon_accuracy": 1e-2,
        "base_seed": 0,
        "output_dir": "out",
    },
}

_SCHEMA = {
    "schema_version": None,
    "preset": None,
    "mode": None,
    "algorithms": None,
    "problem": {
        "type", "seed", "dim", "n_records", "noise_variance", "correlation",
        "rank", "path", "format", "max_ratings", "n_rows", "n_cols",
        "noise_std", "observed_fraction",
    },
    "sampler": {
        "step", "friction", "inv_temperature", "memory_size", "n_s", "n_o",
        "epsilon", "rho",
    },
    "baselines": {"a-sgd", "mb-lbfgs-simplified", "sgld"},
    "sim": {
        "workers", "sigma_worker", "comm_time", "timeout", "max_updates",
        "max_time", "sample_every", "timing", "per_worker_speed",
        "wait_for_stragglers",
    },
    "runtime": {"workers", "max_updates", "sample_every"},
    "sweep": {"sigma_worker", "workers"},
    "repetitions": None,
    "epsilon_accuracy": None,
    "base_seed": None,
    "output_dir": None,
}


def _check_keys(doc, allowed, path):
    unknown = set(doc) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} at {path or 'top level'}")


@dataclass
class ExperimentConfig:
    """Validated experiment description (a plain dict under the hood)."""

    doc: dict

    def __getitem__(self, key):
        return self.doc[key]

    def get(self, key, default=None):
        return self.doc.get(key, default)

    def to_json(self) -> str:
        return json.dumps(self.doc, indent=2, sort_keys=True)


def _deep_merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate_config(doc: dict) -> ExperimentConfig:
    _check_keys(doc, _SCHEMA, "")
    preset = doc.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; known: {sorted(PRESETS)}")
        doc = _deep_merge(PRESETS[preset], doc)
    for section, allowed in _SCHEMA.items():
        if isinstance(allowed, set) and section in doc:
            if not isinstance(doc[section], dict):
                raise ConfigError(f"section {section!r} must be an object")
            _check_keys(doc[section], allowed, section)
    mode = doc.get("mode")
    if mode not in ("simulate", "run"):
        raise ConfigError(f"mode must be 'simulate' or 'run', got {mode!r}")
    algos = doc.get("algorithms", [])
    if not algos:
        raise ConfigError("at least one algorithm required")
    for a in algos:
        if a not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {a!r}; known: {list(ALGORITHMS)}")
    if "problem" not in doc:
        raise ConfigError("missing 'problem' section")
    return ExperimentConfig(doc)


def load_config(path) -> ExperimentConfig:
    """Parse and validate a JSON experiment configuration."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path} at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config root must be a JSON object ({path})")
    return validate_config(doc)


def synth_linear_gaussian(seed, dim, n_records, noise_variance, correlation=0.0):
    """Generate the synthetic linear Gaussian instance.

    Feature rows are standard normal plus a shared direction scaled by the
    ``correlation`` knob, which induces correlation in the posterior (the
    published recipe is unspecified; this is one documented choice).  Rows
    are normalized to unit norm: with the N_Y/|Omega| rescaling of
    subsampled gradients, un-normalized rows make the per-step stochastic
    curvature large enough that the discrete dynamics are unstable at the
    intended step sizes.
    Returns (model, theta_star, u_star) with the closed-form optimum.
    """
    if dim < 1 or n_records < 1:
        raise ConfigError("dim and n_records must be positive")
    rng = np.random.default_rng(seed)
    shared = rng.standard_normal(dim)
    shared /= np.linalg.norm(shared)
    features = rng.standard_normal((n_records, dim))
    features += correlation * np.outer(rng.standard_normal(n_records), shared)
    features /= np.linalg.norm(features, axis=1, keepdims=True)
    theta_true = rng.standard_normal(dim)
    targets = features @ theta_true + math.sqrt(noise_variance) * rng.standard_normal(n_records)
    model = LinearGaussianModel(features, targets, noise_variance)
    theta_star = model.map_estimate()
    return model, theta_star, potential(model, theta_star)


def synth_matrix_factorization(seed, n_rows, n_cols, rank, noise_std=0.1,
                               observed_fraction=0.1):
    """Low-rank synthetic ratings: Y = F G + noise on a random subset of cells."""
    rng = np.random.default_rng(seed)
    f = rng.standard_normal((n_rows, rank))
    g = rng.standard_normal((rank, n_cols))
    n_obs = max(1, int(round(observed_fraction * n_rows * n_cols)))
    flat = rng.choice(n_rows * n_cols, size=n_obs, replace=False)
    rows, cols = np.divmod(flat, n_cols)
    values = np.einsum("ik,ki->i", f[rows], g[:, cols]) + noise_std * rng.standard_normal(n_obs)
    return MatrixFactorizationModel(rows, cols, values, n_rows, n_cols, rank)


def load_movielens(path, fmt="dat-double-colon", rank=5, max_ratings=None):
    """Parse MovieLens ratings into a matrix factorization model.

    Supports the '::'-separated .dat layout (user::item::rating::timestamp)
    and header-bearing CSV (userId,movieId,rating,timestamp).  Rows of the
    data matrix are movies, columns are users; ids are remapped to
    contiguous indices in order of first appearance.  Returns
    (model, info) with info = {'n_rows', 'n_cols', 'nnz'}.
    """
    if fmt not in ("dat-double-colon", "csv"):
        raise ConfigError(f"unknown ratings format {fmt!r}")
    users, items, ratings = [], [], []
    try:
        fh = open(path, encoding="utf-8", errors="replace")
    except OSError as exc:
        raise ConfigError(f"cannot read ratings file {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if fmt == "csv" and lineno == 1 and line.lower().startswith("userid"):
                continue
            parts = line.split("::") if fmt == "dat-double-colon" else line.split(",")
            if len(parts) < 3:
                raise ConfigError(f"{path}:{lineno}: expected at least 3 fields, got {len(parts)}")
            try:
                users.append(int(parts[0]))
                items.append(int(parts[1]))
                ratings.append(float(parts[2]))
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from exc
            if max_ratings is not None and len(ratings) >= max_ratings:
                break
    if not ratings:
        raise ConfigError(f"no ratings found in {path}")
    item_map: dict = {}
    user_map: dict = {}
    rows = np.array([item_map.setdefault(i, len(item_map)) for i in items], dtype=np.intp)
    cols = np.array([user_map.setdefault(u, len(user_map)) for u in users], dtype=np.intp)
    model = MatrixFactorizationModel(
        rows, cols, np.array(ratings), len(item_map), len(user_map), rank
    )
    return model, {"n_rows": len(item_map), "n_cols": len(user_map), "nnz": len(ratings)}


def build_problem(cfg: ExperimentConfig):
    """Instantiate the configured problem.

    Returns (model, u_star) where u_star is None when no closed-form
    optimum exists (matrix factorization)."""
    p = dict(cfg["problem"])
    ptype = p.get("type")
    if ptype == "linear-gaussian":
        model, _, u_star = synth_linear_gaussian(
            seed=p.get("seed", 0),
            dim=p.get("dim", 100),
            n_records=p.get("n_records", 600),
            noise_variance=p.get("noise_variance", 10.0),
            correlation=p.get("correlation", 0.0),
        )
        return model, u_star
    if ptype == "matrix-factorization":
        if p.get("path"):
            model, _ = load_movielens(
                p["path"], fmt=p.get("format", "dat-double-colon"),
                rank=p.get("rank", 5), max_ratings=p.get("max_ratings"),
            )
        else:
            model = synth_matrix_factorization(
                seed=p.get("seed", 0),
                n_rows=p.get("n_rows", 200),
                n_cols=p.get("n_cols", 300),
                rank=p.get("rank", 3),
                noise_std=p.get("noise_std", 0.1),
                observed_fraction=p.get("observed_fraction", 0.1),
            )
        return model, None
    raise ConfigError(f"unknown problem type {ptype!r}")


def _sampler_cfg(cfg, algo, model):
    s = dict(cfg["sampler"])
    n_total = s.get("n_s") or None
    if s.get("n_s") is None or s.get("n_o") is None:
        # N_Omega = N_Y/100, N_O = N_Omega/3
        n_omega = max(3, model.n_records // 100)
        s["n_o"] = max(1, n_omega // 3)
        s["n_s"] = n_omega - s["n_o"]
    over = (cfg.get("baselines") or {}).get(algo, {})
    merged = {**s, **over}
    return SamplerConfig(
        step=merged["step"],
        friction=merged.get("friction", 0.5),
        inv_temperature=merged.get("inv_temperature", math.inf),
        memory_size=merged.get("memory_size", 3),
        n_s=merged["n_s"],
        n_o=merged["n_o"],
        epsilon=merged.get("epsilon", 1e-8),
        rho=merged.get("rho", 0.0),
    )


def _sim_cfg(cfg, algo, seed, sigma_override=None):
    s = dict(cfg.get("sim") or {})
    timing = (s.get("timing") or {}).get(algo, {})
    return SimConfig(
        workers=s.get("workers", 1),
        mu_master=timing.get("mu_master", 0.0),
        mu_worker=timing.get("mu_worker", s.get("mu_worker", 1.0) if "mu_worker" in s else 1.0),
        sigma_worker=s.get("sigma_worker", 0.0) if sigma_override is None else sigma_override,
        comm_time=s.get("comm_time", 0.0),
        timeout=s.get("timeout", math.inf),
        max_updates=s.get("max_updates", 1000),
        max_time=s.get("max_time", math.inf),
        seed=seed,
        sample_every=s.get("sample_every", 1),
        per_worker_speed=s.get("per_worker_speed", False),
        wait_for_stragglers=s.get("wait_for_stragglers", True),
    )


def run_sgld_serial(sim_cfg: SimConfig, sampler_cfg, model, theta0=None) -> SimResult:
    """Serial SGLD baseline with simulated per-iteration timing."""
    from .model import draw_subsample

    rng = np.random.default_rng(sim_cfg.seed)
    theta = np.zeros(model.dim) if theta0 is None else np.asarray(theta0, dtype=float).copy()
    step_time = sim_cfg.mu_worker + 2 * sim_cfg.comm_time + sim_cfg.mu_master
    trace = []
    from .sampler import ParameterState

    state = ParameterState(theta=theta, u=np.zeros(model.dim), iteration=0)
    include_rmse = isinstance(model, MatrixFactorizationModel)
    trace.append(TraceRecord(0.0, 0, 0, potential(model, theta),
                             rmse(model, theta) if include_rmse else None))
    t = 0.0
    for n in range(1, sim_cfg.max_updates + 1):
        sub = draw_subsample(rng, model.n_records, sampler_cfg.n_s, sampler_cfg.n_o)
        theta = sgld_step(theta, sampler_cfg.step, sampler_cfg.inv_temperature,
                          model, sub.combined, rng)
        t += step_time
        if t > sim_cfg.max_time:
            break
        if n % sim_cfg.sample_every == 0:
            trace.append(TraceRecord(t, n, 0, potential(model, theta),
                                     rmse(model, theta) if include_rmse else None))
        state = ParameterState(theta=theta, u=state.u, iteration=n)
    return SimResult(trace=trace, final_state=state,
                     staleness_log=[(r.iteration, 0) for r in trace[1:]])


def _initial_theta(cfg, model):
    """Starting point for the configured problem.

    Matrix factorization starts from a small random point: the all-zeros
    point has both factors zero, so the gradient vanishes there and the
    dynamics would sit on that saddle indefinitely.  The quadratic problem
    keeps the zero start (None)."""
    if isinstance(model, MatrixFactorizationModel):
        seed = (cfg.get("problem") or {}).get("seed", 0)
        return 0.1 * np.random.default_rng(seed).standard_normal(model.dim)
    return None


def _simulate_one(cfg, algo, model, seed, sigma=None):
    samp = _sampler_cfg(cfg, algo, model)
    sim = _sim_cfg(cfg, algo, seed, sigma_override=sigma)
    theta0 = _initial_theta(cfg, model)
    if algo == "mb-lbfgs-simplified":
        over = (cfg.get("baselines") or {}).get(algo, {})
        master = MbLbfgsMaster(
            model.dim, step=over.get("step", samp.step),
            memory_size=samp.memory_size, epsilon=samp.epsilon, rho=samp.rho,
        )
        return run_sync_mb(sim, master, samp, model, theta0=theta0)
    if algo == "sgld":
        return run_sgld_serial(sim, samp, model, theta0=theta0)
    return run_async(sim, samp, model, algo=algo, theta0=theta0)


def _mean_std(values):
    arr = np.array([v for v in values if v is not None], dtype=float)
    if arr.size == 0:
        return None, None, 0
    return float(arr.mean()), float(arr.std(ddof=0)), int(arr.size)


def run_experiment(cfg: ExperimentConfig, out_dir=None):
    """Execute the configured experiment; returns the summary dict.

    Writes one trace CSV per (algorithm, sweep value, repetition) named
    ``{algo}_{param}-{value}_rep-{k}.csv`` plus ``summary.json``.  Partial
    outputs are removed if the experiment fails."""
    out_dir = out_dir or cfg.get("output_dir") or "out"
    os.makedirs(out_dir, exist_ok=True)
    written = []
    try:
        return _run_experiment_inner(cfg, out_dir, written)
    except Exception:
        for path in written:
            try:
                os.remove(path)
            except OSError:
                pass
        raise


def _run_experiment_inner(cfg, out_dir, written):
    model, u_star = build_problem(cfg)
    mode = cfg["mode"]
    reps = cfg.get("repetitions", 1)
    base_seed = cfg.get("base_seed", 0)
    eps = cfg.get("epsilon_accuracy", 1e-2)
    sweep = cfg.get("sweep") or {}
    summary = {
        "mode": mode,
        "u_star": u_star,
        "epsilon": eps,
        "base_seed": base_seed,
        "repetition_seeds": [base_seed + k for k in range(reps)],
        "algorithms": {},
    }
    if mode == "simulate":
        sigmas = sweep.get("sigma_worker") or [
            (cfg.get("sim") or {}).get("sigma_worker", 0.0)
        ]
        for algo in cfg["algorithms"]:
            points = []
            for sigma in sigmas:
                times, finals, rmses = [], [], []
                for k in range(reps):
                    res = _simulate_one(cfg, algo, model, base_seed + k, sigma=sigma)
                    name = f"{algo}_sigma-{sigma:g}_rep-{k}.csv"
                    path = os.path.join(out_dir, name)
                    write_trace_csv(res.trace, path)
                    written.append(path)
                    if u_star is not None:
                        times.append(time_to_epsilon(res.trace, u_star, eps))
                    finals.append(res.trace[-1].potential)
                    if res.trace[-1].rmse is not None:
                        rmses.append(res.trace[-1].rmse)
                t_mean, t_std, t_n = _mean_std(times)
                r_mean, r_std, _ = _mean_std(rmses)
                points.append({
                    "sigma_worker": sigma,
                    "time_to_epsilon_mean": t_mean,
                    "time_to_epsilon_std": t_std,
                    "reached": t_n,
                    "final_potential_mean": _mean_std(finals)[0],
                    "final_rmse_mean": r_mean,
                    "final_rmse_std": r_std,
                })
            summary["algorithms"][algo] = {"points": points}
    else:
        worker_counts = sweep.get("workers") or [
            (cfg.get("runtime") or {}).get("workers", 1)
        ]
        r = cfg.get("runtime") or {}
        for algo in cfg["algorithms"]:
            if algo in ("mb-lbfgs-simplified", "sgld"):
                raise ConfigError(f"{algo} is not available in run mode")
            points = []
            for w in worker_counts:
                walls, finals = [], []
                for k in range(reps):
                    samp = _sampler_cfg(cfg, algo, model)
                    report = rt.run(
                        workers=w, sampler_cfg=samp, model=model, algo=algo,
                        max_updates=r.get("max_updates", 1000),
                        theta0=_initial_theta(cfg, model),
                        seed=base_seed + k,
                        sample_every=r.get("sample_every", 0) or 0,
                    )
                    if report.error:
                        raise DivergenceError(report.error)
                    name = f"{algo}_workers-{w}_rep-{k}.csv"
                    path = os.path.join(out_dir, name)
                    write_trace_csv(report.trace, path)
                    written.append(path)
                    walls.append(report.wall_ms)
                    finals.append(report.final_potential)
                points.append({
                    "workers": w,
                    "wall_ms_mean": _mean_std(walls)[0],
                    "wall_ms_std": _mean_std(walls)[1],
                    "final_potential_mean": _mean_std(finals)[0],
                })
            base = next((p for p in points if p["workers"] == 1), None)
            if base:
                for p in points:
                    p["speedup_vs_w1"] = base["wall_ms_mean"] / p["wall_ms_mean"]
            summary["algorithms"][algo] = {"points": points}
    spath = os.path.join(out_dir, "summary.json")
    with open(spath, "w") as fh:
        json.dump(summary, fh, indent=2)
    written.append(spath)
    return summary
