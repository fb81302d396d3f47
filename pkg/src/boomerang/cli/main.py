"""Command line entry point: ``boomerang {run,sample,check,bridge}``."""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import platform
import sys

import numpy as np
import scipy

from .. import __version__
from ..core import ContractError
from ..diagnostics import discretize, ess_mean, event_stats
from ..events import BoundViolationError
from ..samplers import SamplerConfig
from .config import DEFAULT_MODEL, SAMPLERS, ConfigError, ExperimentConfig, load_config
from .experiments import RunFailure, atomic_write_text, run_matrix

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _versions():
    return {"boomerang": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _threads():
    raw = os.environ.get("PDMC_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"PDMC_THREADS must be an integer, got {raw!r}") from None


def _apply_overrides(cfg: ExperimentConfig, args):
    if args.seed is not None:
        cfg.seeds = [args.seed]
    if args.horizon is not None:
        cfg.horizon = args.horizon
    if args.bounds is not None:
        cfg.strict_bounds = args.bounds == "strict"
    return cfg


def _execute(cfg: ExperimentConfig, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    started = _now()
    n_runs = len(cfg.runs())

    def progress(done, total):
        print(f"[{done}/{total}] runs finished", file=sys.stderr)

    print(f"{cfg.experiment}: {n_runs} runs -> {out_dir}", file=sys.stderr)
    rows, extra = run_matrix(cfg, out_dir, threads=_threads(), progress=progress)
    manifest = {"config": cfg.to_dict(), "source": cfg.source, "seeds": cfg.seeds,
                "started": started, "finished": _now(), "versions": _versions(),
                "outputs": ["stats.csv"] + (["reflections.csv"] if extra else [])}
    atomic_write_text(os.path.join(out_dir, "manifest.json"), json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {len(rows)} rows to {os.path.join(out_dir, 'stats.csv')}")
    return EXIT_OK


def cmd_run(args):
    if bool(args.config) == bool(args.manifest):
        raise ConfigError("give exactly one of --config or --manifest")
    if args.config:
        cfg = load_config(args.config)
    else:
        try:
            with open(args.manifest) as fh:
                manifest = json.load(fh)
            cfg = ExperimentConfig.from_dict(manifest["config"], source=args.manifest)
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"{args.manifest}: unreadable manifest ({exc})") from exc
    cfg = _apply_overrides(cfg, args)
    return _execute(cfg, args.out)


def cmd_bridge(args):
    params = {"alpha": [args.alpha], "u": [args.u], "v": [args.v], "T": [args.T], "N": [args.N],
              "n_paths": [args.n_paths]}
    cfg = ExperimentConfig("bridge_paths", ["factorised_boomerang"],
                           [args.seed if args.seed is not None else 0],
                           horizon=args.horizon if args.horizon is not None else 20_000.0,
                           refresh_rate=args.refresh_rate, model=params, source="<bridge>")
    if args.bounds is not None:
        cfg.strict_bounds = args.bounds == "strict"
    return _execute(cfg, args.out)


def _parse_params(items):
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--param expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        for conv in (int, float):
            try:
                out[k] = conv(v)
                break
            except ValueError:
                continue
        else:
            out[k] = v
    return out


def cmd_sample(args):
    from .experiments import (build_bridge, build_logistic, build_simple)
    from ..samplers import (run_boomerang, run_bps, run_factorised_boomerang,
                            run_subsampled_boomerang, run_zigzag)
    from ..subsampling import ControlVariateCache

    params = _parse_params(args.param)
    seed = args.seed if args.seed is not None else 0
    horizon = args.horizon if args.horizon is not None else 10_000.0
    sc = SamplerConfig(time_horizon=horizon, refresh_rate=args.refresh_rate, rng_seed=seed,
                       strict_bounds=args.bounds != "warn")
    model_name = args.model
    if model_name.endswith(".csv"):
        params["data"] = model_name
        model_name = "logistic"
    if model_name == "logistic":
        params.setdefault("n", 100)
        params.setdefault("d", 2)
        _, _, ref, target, pre = build_logistic(params, seed)
        print(f"preconditioner: x_star={np.array2string(ref.x_star, precision=4)} "
              f"({pre:.3f}s)")
    elif model_name == "bridge":
        target = build_bridge(params)
        sc.bound_strategy, sc.subsample = "constant", True
    elif model_name in ("gaussian", "quartic", "zero"):
        target = build_simple(dict(params, model=model_name))
        if model_name == "quartic":
            sc.bound_strategy = "constant"
    else:
        raise ConfigError(f"unknown model {args.model!r}")
    sampler = args.sampler
    if sampler == "boomerang":
        log = run_boomerang(target, config=sc)
    elif sampler == "subsampled_boomerang":
        sc.bound_strategy = "constant"
        log = run_subsampled_boomerang(target, cache=ControlVariateCache(target, target.ref),
                                       config=sc)
    elif sampler == "factorised_boomerang":
        log = run_factorised_boomerang(target, config=sc)
    elif sampler == "bps":
        log = run_bps(target, sc)
    elif sampler == "zigzag":
        log = run_zigzag(target, sc)
    else:
        raise ConfigError(f"sampler {sampler!r} is not available for sample")
    os.makedirs(args.out, exist_ok=True)
    log.to_jsonl(os.path.join(args.out, "events.jsonl"))
    chain = discretize(log, args.step)
    cols = [f"x{i}" for i in range(chain.samples.shape[1])]
    lines = ["# columns: t," + ",".join(cols), "t," + ",".join(cols)]
    lines += [",".join([repr(float(t))] + [repr(float(x)) for x in row])
              for t, row in zip(chain.times, chain.samples)]
    atomic_write_text(os.path.join(args.out, "samples.csv"), "\n".join(lines) + "\n")
    st = event_stats(log)
    mean = chain.samples.mean(axis=0)
    summary = {"sampler": sampler, "model": model_name, "seed": seed, "horizon": horizon,
               "reflections": st["n_reflections"], "refreshments": st["n_refreshments"],
               "shadow_events": st["n_shadow"], "ess_mean": round(ess_mean(chain), 2),
               "runtime_s": round(log.stats["runtime_s"], 3),
               "mean": [round(float(m), 6) for m in mean[:10]]}
    for k, v in summary.items():
        print(f"{k}: {v}")
    return EXIT_OK


def cmd_check(args):
    from .checks import CHECKS, run_checks

    names = [n.strip() for n in args.filter.split(",")] if args.filter else None
    if names:
        bad = [n for n in names if n not in CHECKS]
        if bad:
            raise ConfigError(f"unknown check(s) {bad}; available: {', '.join(CHECKS)}")
    n_fail = run_checks(names, seed=args.seed or 0, bound_scale=args.debug_bound_scale)
    print("all checks passed" if not n_fail else f"{n_fail} check failure(s)")
    return EXIT_OK if not n_fail else EXIT_FAIL


def _add_common(p, out=True):
    p.add_argument("--seed", type=int, default=None, help="override the seed(s)")
    p.add_argument("--horizon", type=float, default=None, help="override the time horizon")
    if out:
        p.add_argument("--out", default="results", help="output directory")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--strict-bounds", dest="bounds", action="store_const", const="strict",
                   help="abort on a computational bound violation (default)")
    g.add_argument("--warn-bounds", dest="bounds", action="store_const", const="warn",
                   help="warn and accept the event on a bound violation")
    p.set_defaults(bounds=None)


def build_parser():
    parser = argparse.ArgumentParser(prog="boomerang",
                                     description="Boomerang samplers and experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("run", help="run an experiment matrix from a config file or manifest")
    p.add_argument("--config", help="INI experiment file")
    p.add_argument("--manifest", help="manifest.json of an earlier run to repeat")
    _add_common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sample", help="run a single chain")
    p.add_argument("model", help="gaussian, quartic, zero, logistic, bridge or a logistic CSV")
    p.add_argument("--sampler", default="boomerang", choices=[s for s in SAMPLERS if s != "mala"])
    p.add_argument("--param", action="append", metavar="KEY=VALUE",
                   help="model parameter (repeatable), e.g. d=5, n=1000, alpha=0.5")
    p.add_argument("--refresh-rate", type=float, default=0.1)
    p.add_argument("--step", type=float, default=None, help="discretisation step")
    _add_common(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("check", help="fast invariant suite")
    p.add_argument("--filter", help="comma-separated subset of checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--debug-bound-scale", type=float, default=1.0,
                   help="multiply all computational bounds (fault injection)")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("bridge", help="simulate diffusion bridges and write a path CSV")
    d = DEFAULT_MODEL["bridge_paths"]
    p.add_argument("--alpha", type=float, default=d["alpha"][0])
    p.add_argument("--u", type=float, default=d["u"][0])
    p.add_argument("--v", type=float, default=d["v"][0])
    p.add_argument("--T", type=float, default=d["T"][0])
    p.add_argument("--N", type=int, default=d["N"][0])
    p.add_argument("--n-paths", type=int, default=d["n_paths"][0])
    p.add_argument("--refresh-rate", type=float, default=0.01)
    _add_common(p)
    p.set_defaults(func=cmd_bridge)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RunFailure as exc:
        print(f"error: run failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except BoundViolationError as exc:
        print(f"error: bound violation: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (ContractError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
