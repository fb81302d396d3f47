"""Experiment matrix execution: one function call per (sampler, parameters, seed)."""

from __future__ import annotations

import csv
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from ..core import ContractError, EnergyTarget, ReferenceMeasure
from ..diagnostics import (discretize, ess_batch_means, ess_mean, event_stats, write_stats_csv)
from ..events import BoundViolationError
from ..models import (BridgeModel, FaberSchauderBasis, GaussianEnergy, LogisticEnergy,
                      SeparableQuartic, ZeroPotential, gaussian_target, generate_logistic_data,
                      load_logistic_csv)
from ..samplers import (SamplerConfig, rescale_velocity_for_comparison, run_boomerang, run_bps,
                        run_factorised_boomerang, run_mala, run_subsampled_boomerang, run_zigzag)
from ..subsampling import ControlVariateCache, build_preconditioner
from .config import ExperimentConfig


class RunFailure(RuntimeError):
    """A single run of the matrix failed; the message names the run."""


def atomic_write_text(path, text: str) -> None:
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _run_label(sampler, params, seed):
    p = ",".join(f"{k}={v}" for k, v in params.items())
    return f"{sampler}[{p}] seed={seed}"


# problem construction --------------------------------------------------------

def build_logistic(params, seed):
    """Data, energy and (timed) preconditioned reference for one logistic problem."""
    rng = np.random.default_rng(seed)
    path = params.get("data")
    prior = float(params.get("prior_variance", 1.0))
    if path:
        data = load_logistic_csv(path, prior)
    else:
        data, _ = generate_logistic_data(int(params["n"]), int(params["d"]), rng,
                                         bool(params.get("scale_predictors", False)), prior)
    energy = LogisticEnergy(data)
    t0 = time.perf_counter()
    x_star, sigma = build_preconditioner(energy)
    ref = ReferenceMeasure(x_star, sigma)
    target = EnergyTarget(energy, ref)
    target.bound_constants()
    pre = time.perf_counter() - t0
    return data, energy, ref, target, pre


def build_bridge(params):
    basis = FaberSchauderBasis(float(params.get("T", 50.0)), int(params.get("N", 6)),
                               float(params.get("u", 0.0)), float(params.get("v", 0.0)))
    return BridgeModel(basis, float(params.get("alpha", 1.0)))


def build_simple(params):
    """Gaussian / quartic / zero targets described by ``params['model']``."""
    kind = params.get("model", "gaussian")
    d = int(params.get("d", 2))
    ref = ReferenceMeasure(np.full(d, float(params.get("shift", 0.0))),
                           np.full(d, float(params.get("sigma2", 1.0))))
    if kind == "gaussian":
        var = float(params.get("variance", 1.0))
        return gaussian_target(np.zeros(d), np.full(d, var), ref)
    if kind == "quartic":
        return EnergyTarget(SeparableQuartic(np.ones(d), float(params.get("b", 1.0))), ref)
    if kind == "zero":
        return ZeroPotential(ref)
    raise ContractError(f"unknown model {kind!r}")


# single runs ---------------------------------------------------------------

def _summary(log, sampler, target, seed, params, h=None, pre=0.0, squared_norm=False):
    chain = discretize(log, h)
    ess = ess_mean(chain, squared_norm=squared_norm)
    run = float(log.stats.get("runtime_s", 0.0))
    st = event_stats(log)
    return {"sampler": sampler, "target": target, "n": params.get("n", ""),
            "d": log.dim, "seed": seed, "ess_mean": ess,
            "ess_per_sec": ess / run if run > 0 else math.nan,
            "ess_per_sec_incl_pre": ess / (run + pre) if run + pre > 0 else math.nan,
            "n_reflections": st["n_reflections"], "n_refresh": st["n_refreshments"],
            "n_shadow": st["n_shadow"], "runtime_s": run, "preprocess_s": pre}


def run_logistic(cfg: ExperimentConfig, sampler, params, seed, log_path=None):
    data, energy, ref, target, pre = build_logistic(params, seed)
    sc = SamplerConfig(time_horizon=cfg.horizon, refresh_rate=cfg.refresh_rate, rng_seed=seed,
                       strict_bounds=cfg.strict_bounds)
    params = dict(params, n=data.n)
    if sampler == "boomerang":
        log = run_boomerang(target, config=sc)
    elif sampler == "subsampled_boomerang":
        t0 = time.perf_counter()
        cache = ControlVariateCache(target, ref)
        pre += time.perf_counter() - t0
        sc.bound_strategy = "constant"
        log = run_subsampled_boomerang(target, cache=cache, config=sc)
    elif sampler == "factorised_boomerang":
        dref = ReferenceMeasure(ref.x_star, np.diag(ref.sigma).copy())
        log = run_factorised_boomerang(EnergyTarget(energy, dref), config=sc)
    elif sampler == "bps":
        sc.refresh_rate = cfg.bps_refresh_rate
        log = run_bps(energy, sc, x0=ref.x_star,
                      speed=rescale_velocity_for_comparison("bps", ref))
        pre = 0.0
    elif sampler == "zigzag":
        log = run_zigzag(energy, sc, x0=ref.x_star,
                         speed=rescale_velocity_for_comparison("zigzag", ref))
        pre = 0.0
    elif sampler == "mala":
        res = run_mala(energy, 0.1 / math.sqrt(data.n), 10_000, np.random.default_rng(seed),
                       x0=ref.x_star, warmup=2_000)
        ess = float(np.mean([ess_batch_means(res.samples[:, i]) for i in range(data.d)]))
        return {"sampler": sampler, "target": "logistic", "n": data.n, "d": data.d,
                "seed": seed, "ess_mean": ess, "ess_per_sec": ess / res.runtime_s,
                "ess_per_sec_incl_pre": ess / res.runtime_s, "n_reflections": 0,
                "n_refresh": 0, "n_shadow": 0, "runtime_s": res.runtime_s, "preprocess_s": 0.0}
    else:
        raise ContractError(f"sampler {sampler!r} not available for logistic targets")
    if log_path:
        log.to_jsonl(log_path)
    return _summary(log, sampler, "logistic", seed, params, pre=pre)


def run_bridge(cfg: ExperimentConfig, sampler, params, seed, log_path=None):
    model = build_bridge(params)
    sc = SamplerConfig(time_horizon=cfg.horizon, refresh_rate=cfg.refresh_rate, rng_seed=seed,
                       bound_strategy="constant", subsample=True, strict_bounds=cfg.strict_bounds)
    if sampler == "factorised_boomerang":
        log = run_factorised_boomerang(model, config=sc)
    elif sampler == "zigzag":
        log = run_zigzag(model, sc, speed=rescale_velocity_for_comparison("zigzag", model.ref))
    else:
        raise ContractError(f"sampler {sampler!r} not available for bridge targets")
    if log_path:
        log.to_jsonl(log_path)
    st = event_stats(log, model.basis.level)
    row = {"sampler": sampler, "target": "bridge", "n": "", "d": model.dim, "seed": seed,
           "ess_mean": "", "ess_per_sec": "", "ess_per_sec_incl_pre": "",
           "n_reflections": st["n_reflections"], "n_refresh": st["n_refreshments"],
           "n_shadow": st["n_shadow"], "runtime_s": log.stats["runtime_s"], "preprocess_s": 0.0}
    return row, log, model


def bridge_path_table(log, model, n_paths: int, n_times: int = 201):
    """``n_paths`` snapshots of the coefficient trajectory, evaluated as paths."""
    h = log.horizon / n_paths
    chain = discretize(log, h=h)
    coeffs = chain.samples[1:n_paths + 1]
    t = np.linspace(0.0, model.basis.T, n_times)
    return t, model.basis.evaluate(coeffs, t)


def bridge_path_checks(t, paths, u, v, band=1.0):
    """Fraction of exact endpoints and of paths visiting some ``(2k-1) pi +- band``."""
    ends = np.mean((paths[:, 0] == u) & (paths[:, -1] == v))
    k = np.round((paths[:, 1:-1] / math.pi + 1) / 2)
    near = np.abs(paths[:, 1:-1] - (2 * k - 1) * math.pi) <= band
    return float(ends), float(np.mean(near.any(axis=1)))


def run_perturbation(cfg: ExperimentConfig, sampler, params, seed, log_path=None):
    d = int(params.get("d", 10))
    sc = SamplerConfig(time_horizon=cfg.horizon, refresh_rate=cfg.refresh_rate, rng_seed=seed,
                       strict_bounds=cfg.strict_bounds)
    if sampler == "boomerang":
        log = run_boomerang(build_simple(dict(params, model="gaussian")), config=sc)
    elif sampler == "bps":
        sc.refresh_rate = cfg.bps_refresh_rate
        log = run_bps(GaussianEnergy(np.zeros(d), np.ones(d)), sc)
    else:
        raise ContractError(f"sampler {sampler!r} not available for this experiment")
    if log_path:
        log.to_jsonl(log_path)
    row = _summary(log, sampler, "gaussian", seed, params, squared_norm=True)
    row.update(sigma2=params.get("sigma2", 1.0), shift=params.get("shift", 0.0))
    return row


def run_custom(cfg: ExperimentConfig, sampler, params, seed, log_path=None):
    kind = params.get("model", "gaussian")
    if kind == "logistic":
        return run_logistic(cfg, sampler, params, seed, log_path)
    if kind == "bridge":
        return run_bridge(cfg, sampler, params, seed, log_path)[0]
    target = build_simple(params)
    sc = SamplerConfig(time_horizon=cfg.horizon, refresh_rate=cfg.refresh_rate, rng_seed=seed,
                       strict_bounds=cfg.strict_bounds,
                       bound_strategy="constant" if kind == "quartic" else "affine")
    if sampler == "boomerang":
        log = run_boomerang(target, config=sc)
    elif sampler == "factorised_boomerang":
        log = run_factorised_boomerang(target, config=sc)
    elif sampler == "bps":
        sc.refresh_rate = cfg.bps_refresh_rate
        log = run_bps(target, sc)
    elif sampler == "zigzag":
        log = run_zigzag(target, sc)
    else:
        raise ContractError(f"sampler {sampler!r} not available for model {kind!r}")
    if log_path:
        log.to_jsonl(log_path)
    return _summary(log, sampler, kind, seed, params)


def execute_run(cfg_dict, sampler, params, seed, out_dir):
    """Run one cell of the matrix; returns ``(row, extra_rows)``."""
    cfg = ExperimentConfig.from_dict(cfg_dict)
    label = _run_label(sampler, params, seed)
    safe = "".join(c if c.isalnum() or c in "-_=." else "_" for c in label)
    log_path = os.path.join(out_dir, f"events_{safe}.jsonl.gz") if cfg.write_logs else None
    extra = []
    try:
        if cfg.experiment in ("logistic_vs_n", "logistic_vs_d"):
            row = run_logistic(cfg, sampler, params, seed, log_path)
        elif cfg.experiment in ("bridge_paths", "bridge_reflections"):
            row, log, model = run_bridge(cfg, sampler, params, seed, log_path)
            row["alpha"] = model.alpha
            if cfg.experiment == "bridge_reflections":
                per = event_stats(log, model.basis.level)["reflections_per_level"]
                extra = [{"sampler": sampler, "alpha": model.alpha, "seed": seed, "level": i,
                          "reflections_per_coefficient": repr(float(r * log.horizon)),
                          "reflections_per_coefficient_per_time": repr(float(r))}
                         for i, r in enumerate(per)]
            else:
                n_paths = int(params.get("n_paths", 1000))
                t, paths = bridge_path_table(log, model, n_paths)
                ends, band = bridge_path_checks(t, paths, model.basis.u, model.basis.v)
                row.update(endpoint_fraction=ends, attractor_fraction=band)
                path_csv = os.path.join(out_dir, f"paths_{safe}.csv")
                lines = ["# columns: path,t,x", "path,t,x"]
                for p in range(paths.shape[0]):
                    lines.extend(f"{p},{tt!r},{xx!r}" for tt, xx in zip(t, paths[p]))
                atomic_write_text(path_csv, "\n".join(lines) + "\n")
        elif cfg.experiment == "reference_perturbation":
            row = run_perturbation(cfg, sampler, params, seed, log_path)
        else:
            row = run_custom(cfg, sampler, params, seed, log_path)
    except BoundViolationError as exc:
        raise RunFailure(f"{label}: bound violation: {exc}") from exc
    except (ContractError, ValueError) as exc:
        raise RunFailure(f"{label}: {exc}") from exc
    row.update({k: v for k, v in params.items() if k not in row})
    return row, extra


def run_matrix(cfg: ExperimentConfig, out_dir, threads: int = 1, progress=None):
    """Execute all runs and write ``stats.csv`` (and ``reflections.csv`` for bridges)."""
    os.makedirs(out_dir, exist_ok=True)
    runs = cfg.runs()
    cfg_dict = cfg.to_dict()
    results = []
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futs = [pool.submit(execute_run, cfg_dict, s, p, seed, out_dir) for s, p, seed in runs]
            for fut in futs:
                results.append(fut.result())
                if progress:
                    progress(len(results), len(runs))
    else:
        for s, p, seed in runs:
            results.append(execute_run(cfg_dict, s, p, seed, out_dir))
            if progress:
                progress(len(results), len(runs))
    rows = [r for r, _ in results]
    extra = [e for _, ex in results for e in ex]
    from ..diagnostics import STATS_COLUMNS

    model_cols = [k for k in cfg.model if k not in STATS_COLUMNS]
    cols = STATS_COLUMNS + [c for c in model_cols + ["endpoint_fraction", "attractor_fraction"]
                            if any(c in r for r in rows)]
    stats_path = os.path.join(out_dir, "stats.csv")
    write_stats_csv(stats_path + ".tmp", rows, cols)
    os.replace(stats_path + ".tmp", stats_path)
    if extra:
        refl_path = os.path.join(out_dir, "reflections.csv")
        fields = list(extra[0])
        with open(refl_path + ".tmp", "w", newline="") as fh:
            fh.write("# columns: " + ",".join(fields) + "\n")
            w = csv.DictWriter(fh, fieldnames=fields)
            w.writeheader()
            w.writerows(extra)
        os.replace(refl_path + ".tmp", refl_path)
    return rows, extra
