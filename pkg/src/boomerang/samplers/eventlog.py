"""Event skeleton of a PDMP trajectory and its JSON-lines serialisation.

Between events the flow is exact, so the skeleton is sufficient: the position
at any time is recovered by flowing from the last event before it. Samplers
with per-coordinate events (factorised Boomerang, Zig-Zag) write *sparse*
records that carry only the coordinate ``i`` that changed.
"""

from __future__ import annotations

import gzip
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

# run statistics that depend on the machine rather than the seed
WALL_CLOCK_STATS = ("runtime_s",)


@dataclass
class EventRecord:
    t: float
    x: np.ndarray
    v: np.ndarray
    kind: str
    i: Optional[int] = None


@dataclass
class SamplerConfig:
    """Settings shared by the event-driven samplers.

    Attributes:
        time_horizon: Length of the simulated trajectory.
        refresh_rate: Velocity refreshment rate (per coordinate for factorised runs).
        rng_seed: Seed for ``numpy.random.default_rng``.
        bound_strategy: ``"affine"`` or ``"constant"``.
        subsample: Use single-term gradient estimates where supported.
        strict_bounds: Raise on bound violations; otherwise warn and clamp.
        bound_scale: Multiplier on every issued bound (fault injection only).
    """

    time_horizon: float = 10_000.0
    refresh_rate: float = 0.1
    rng_seed: int = 0
    bound_strategy: str = "affine"
    subsample: bool = False
    strict_bounds: bool = True
    bound_scale: float = 1.0

    def __post_init__(self):
        if not self.time_horizon > 0:
            raise ValueError("time_horizon must be positive")
        if not self.refresh_rate > 0:
            raise ValueError("refresh_rate must be positive")
        if self.bound_strategy not in ("affine", "constant"):
            raise ValueError(f"unknown bound strategy {self.bound_strategy!r}")


@dataclass
class EventLog:
    """Ordered events of one trajectory.

    ``x0, v0`` is the state at time 0 and ``x_end, v_end`` the state at the
    horizon. Dense records store full vectors; sparse records (``coords[k] >= 0``)
    store the new scalar position and velocity of one coordinate.
    """

    x0: np.ndarray
    v0: np.ndarray
    x_star: np.ndarray
    flow: str = "elliptical"
    horizon: float = 0.0
    times: list = field(default_factory=list)
    kinds: list = field(default_factory=list)
    coords: list = field(default_factory=list)
    xs: list = field(default_factory=list)
    vs: list = field(default_factory=list)
    x_end: Optional[np.ndarray] = None
    v_end: Optional[np.ndarray] = None
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x0 = np.array(self.x0, dtype=float)
        self.v0 = np.array(self.v0, dtype=float)
        self.x_star = np.array(self.x_star, dtype=float)

    @property
    def dim(self) -> int:
        return self.x0.shape[0]

    @property
    def sparse(self) -> bool:
        return any(c >= 0 for c in self.coords)

    def __len__(self):
        return len(self.times)

    def append(self, t, kind, x, v, coord=-1):
        self.times.append(float(t))
        self.kinds.append(kind)
        self.coords.append(coord)
        if coord >= 0:
            self.xs.append(float(x))
            self.vs.append(float(v))
        else:
            self.xs.append(np.array(x, dtype=float))
            self.vs.append(np.array(v, dtype=float))

    def records(self):
        for t, k, c, x, v in zip(self.times, self.kinds, self.coords, self.xs, self.vs):
            yield EventRecord(t, x, v, k, None if c < 0 else c)

    def count(self, kind) -> int:
        return sum(1 for k in self.kinds if k == kind)

    def coordinate_events(self, i: int):
        """Times and post-event ``(x_i, v_i)`` of coordinate ``i``, starting at time 0."""
        times = [0.0]
        xs = [self.x0[i]]
        vs = [self.v0[i]]
        for t, c, x, v in zip(self.times, self.coords, self.xs, self.vs):
            if c == i:
                times.append(t)
                xs.append(x)
                vs.append(v)
            elif c < 0:
                times.append(t)
                xs.append(x[i])
                vs.append(v[i])
        return np.array(times), np.array(xs), np.array(vs)

    def dense_arrays(self):
        """Times, positions and velocities (including time 0) of a dense log."""
        if self.sparse:
            raise ValueError("dense_arrays needs a log with full-state records")
        times = np.array([0.0] + self.times)
        X = np.vstack([self.x0] + self.xs) if self.xs else self.x0[None, :]
        V = np.vstack([self.v0] + self.vs) if self.vs else self.v0[None, :]
        return times, X, V

    # serialisation -------------------------------------------------------
    def _lines(self):
        meta = {"flow": self.flow, "horizon": self.horizon,
                "x_star": self.x_star.tolist(), "dim": self.dim}
        yield {"t": 0.0, "kind": "start", "x": self.x0.tolist(), "v": self.v0.tolist(),
               "meta": meta}
        for t, k, c, x, v in zip(self.times, self.kinds, self.coords, self.xs, self.vs):
            if c >= 0:
                yield {"t": t, "kind": k, "i": c, "x": [x], "v": [v]}
            else:
                yield {"t": t, "kind": k, "x": x.tolist(), "v": v.tolist()}
        end = {"t": self.horizon, "kind": "end",
               "x": None if self.x_end is None else self.x_end.tolist(),
               "v": None if self.v_end is None else self.v_end.tolist(),
               "stats": {k: v for k, v in self.stats.items() if k not in WALL_CLOCK_STATS}}
        yield end

    def to_jsonl(self, path):
        """Write one JSON object per line; gzip when ``path`` ends in ``.gz``.

        Wall-clock statistics are left out so that equal seeds give equal files.
        """
        text = "".join(json.dumps(obj, allow_nan=True) + "\n" for obj in self._lines())
        if str(path).endswith(".gz"):
            # no file name or timestamp in the header: equal logs give equal bytes
            with open(path, "wb") as raw, gzip.GzipFile(
                    filename="", fileobj=raw, mode="wb", mtime=0) as fh:
                fh.write(text.encode())
        else:
            with open(path, "w") as fh:
                fh.write(text)

    @classmethod
    def from_jsonl(cls, path) -> "EventLog":
        opener = gzip.open if str(path).endswith(".gz") else open
        with opener(path, "rt") as fh:
            objs = [json.loads(line) for line in fh if line.strip()]
        start, body, end = objs[0], objs[1:-1], objs[-1]
        meta = start["meta"]
        log = cls(start["x"], start["v"], meta["x_star"], flow=meta["flow"],
                  horizon=meta["horizon"])
        for obj in body:
            if "i" in obj:
                log.append(obj["t"], obj["kind"], obj["x"][0], obj["v"][0], obj["i"])
            else:
                log.append(obj["t"], obj["kind"], obj["x"], obj["v"])
        if end.get("x") is not None:
            log.x_end = np.array(end["x"])
            log.v_end = np.array(end["v"])
        log.stats = end.get("stats", {})
        return log
