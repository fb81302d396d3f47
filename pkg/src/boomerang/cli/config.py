"""Experiment configuration files.

The format is INI with two sections::

    [experiment]
    name = logistic_vs_n          ; one of EXPERIMENTS
    samplers = boomerang, subsampled_boomerang
    seeds = 1, 2, 3
    horizon = 10000
    refresh_rate = 0.1
    bps_refresh_rate = 0.1
    strict_bounds = true
    write_logs = false

    [model]
    n = 100, 1000, 10000          ; list-valued keys form the parameter grid
    d = 2
    prior_variance = 1.0

Every value in ``[model]`` may be a comma-separated list; the run matrix is
the product of all lists with the samplers and seeds.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from itertools import product

EXPERIMENTS = ("logistic_vs_n", "logistic_vs_d", "bridge_paths", "bridge_reflections",
               "reference_perturbation", "custom")

SAMPLERS = ("boomerang", "subsampled_boomerang", "factorised_boomerang", "bps", "zigzag",
            "mala")

DEFAULT_SAMPLERS = {
    "logistic_vs_n": ["boomerang", "subsampled_boomerang", "bps", "zigzag"],
    "logistic_vs_d": ["boomerang", "bps", "zigzag", "mala"],
    "bridge_paths": ["factorised_boomerang"],
    "bridge_reflections": ["factorised_boomerang", "zigzag"],
    "reference_perturbation": ["boomerang", "bps"],
    "custom": ["boomerang"],
}

DEFAULT_MODEL = {
    "logistic_vs_n": {"n": [100, 1000, 10000], "d": [2], "prior_variance": [1.0]},
    "logistic_vs_d": {"n": [1000], "d": [2, 4, 8, 16, 32], "prior_variance": [1.0]},
    "bridge_paths": {"alpha": [1.0], "u": [-math.pi], "v": [3 * math.pi], "T": [50.0],
                     "N": [6], "n_paths": [1000]},
    "bridge_reflections": {"alpha": [0.5, 0.0], "u": [-math.pi], "v": [3 * math.pi],
                           "T": [50.0], "N": [10]},
    "reference_perturbation": {"d": [10], "sigma2": [0.5, 0.75, 1.0, 1.5, 2.0],
                               "shift": [0.0]},
    "custom": {"model": ["gaussian"], "d": [2]},
}

DEFAULT_HORIZON = {"bridge_paths": 20_000.0, "bridge_reflections": 2_000.0}
DEFAULT_REFRESH = {"bridge_paths": 0.01, "bridge_reflections": 0.01}


class ConfigError(ValueError):
    """Invalid configuration; the message names the file and line."""


@dataclass
class ExperimentConfig:
    experiment: str
    samplers: list
    seeds: list
    horizon: float = 10_000.0
    refresh_rate: float = 0.1
    bps_refresh_rate: float = 0.1
    strict_bounds: bool = True
    write_logs: bool = False
    subsample: bool = False
    model: dict = field(default_factory=dict)
    source: str = "<defaults>"

    def grid(self):
        """Model parameter dicts, one per point of the product grid."""
        keys = list(self.model)
        return [dict(zip(keys, vals)) for vals in product(*(self.model[k] for k in keys))]

    def runs(self):
        """``(sampler, params, seed)`` triples of the full run matrix."""
        return [(s, p, seed) for p in self.grid() for s in self.samplers for seed in self.seeds]

    def to_dict(self):
        return {"experiment": self.experiment, "samplers": self.samplers, "seeds": self.seeds,
                "horizon": self.horizon, "refresh_rate": self.refresh_rate,
                "bps_refresh_rate": self.bps_refresh_rate, "strict_bounds": self.strict_bounds,
                "write_logs": self.write_logs, "subsample": self.subsample, "model": self.model}

    @classmethod
    def from_dict(cls, d, source="<manifest>"):
        return cls(source=source, **d)


def _line_numbers(path):
    """Map ``(section, key)`` to its 1-based line in the file."""
    out = {}
    section = None
    with open(path) as fh:
        for no, line in enumerate(fh, 1):
            s = line.strip()
            if s.startswith("[") and s.endswith("]"):
                section = s[1:-1].strip()
            elif "=" in s and not s.startswith((";", "#")):
                out[(section, s.split("=", 1)[0].strip().lower())] = no
    return out


def _parse_scalar(text):
    t = text.strip()
    low = t.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("inf", "infinity"):
        return math.inf
    for conv in (int, float):
        try:
            return conv(t)
        except ValueError:
            pass
    return t


def _parse_list(text):
    return [_parse_scalar(p) for p in text.split(",") if p.strip()]


def load_config(path) -> ExperimentConfig:
    """Parse and validate an experiment file.

    Raises:
        ConfigError: with ``path:line`` of the offending entry.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from exc
    lines = _line_numbers(path)

    def fail(section, key, msg):
        line = lines.get((section, key))
        where = f"{path}:{line}" if line else f"{path}"
        raise ConfigError(f"{where}: [{section}] {key}: {msg}")

    if not parser.has_section("experiment"):
        raise ConfigError(f"{path}: missing [experiment] section")
    exp = parser["experiment"]
    name = exp.get("name", "").strip()
    if name not in EXPERIMENTS:
        fail("experiment", "name", f"unknown experiment {name!r}; expected one of {EXPERIMENTS}")
    samplers = _parse_list(exp.get("samplers", "")) or list(DEFAULT_SAMPLERS[name])
    for s in samplers:
        if s not in SAMPLERS:
            fail("experiment", "samplers", f"unknown sampler {s!r}")
    seeds = _parse_list(exp.get("seeds", "0"))
    if not seeds or not all(isinstance(s, int) for s in seeds):
        fail("experiment", "seeds", "seeds must be a nonempty list of integers")
    if len(set(seeds)) != len(seeds):
        fail("experiment", "seeds", "seeds must be distinct")
    cfg = ExperimentConfig(name, samplers, seeds, source=str(path),
                           horizon=DEFAULT_HORIZON.get(name, 10_000.0),
                           refresh_rate=DEFAULT_REFRESH.get(name, 0.1))
    for key, kind in (("horizon", float), ("refresh_rate", float), ("bps_refresh_rate", float),
                      ("strict_bounds", bool), ("write_logs", bool), ("subsample", bool)):
        if key in exp:
            val = _parse_scalar(exp[key])
            if kind is float:
                if isinstance(val, bool) or not isinstance(val, (int, float)) or not val > 0:
                    fail("experiment", key, f"expected a positive number, got {exp[key]!r}")
                val = float(val)
            elif not isinstance(val, bool):
                fail("experiment", key, f"expected true/false, got {exp[key]!r}")
            setattr(cfg, key, val)
    model = {k: list(v) for k, v in DEFAULT_MODEL[name].items()}
    if parser.has_section("model"):
        for key, text in parser["model"].items():
            vals = _parse_list(text)
            if not vals:
                fail("model", key, "empty grid")
            model[key] = vals
    cfg.model = model
    return cfg
