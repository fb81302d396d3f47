"""Trajectory discretisation, batch-means ESS, generator residuals and event counts."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import ContractError, ReferenceMeasure, TargetModel
from .events import DegenerateGradientError, contour_reflect
from .samplers.eventlog import EventLog


@dataclass
class DiscretizedChain:
    """Trajectory sampled on the grid ``0, h, 2h, ...`` up to the horizon."""

    times: np.ndarray
    samples: np.ndarray
    velocities: np.ndarray
    runtime_seconds: float
    h: float

    @property
    def dim(self) -> int:
        return self.samples.shape[1]


def default_step(horizon: float) -> float:
    """``horizon / 1e5`` capped at 0.1."""
    return min(horizon / 1e5, 0.1)


def _grid(horizon, h):
    n = int(math.floor(horizon / h + 1e-9)) + 1
    return h * np.arange(n)


def _interpolate(te, X, V, grid, flow, x_star):
    # last event at or before each grid time: post-event velocity at event times
    idx = np.searchsorted(te, grid, side="right") - 1
    dt = grid - te[idx]
    x, v = X[idx], V[idx]
    if x.ndim == 2:
        dt = dt[:, None]
    if flow == "elliptical":
        c, s = np.cos(dt), np.sin(dt)
        xi = x - x_star
        return x_star + xi * c + v * s, v * c - xi * s
    return x + v * dt, v


def discretize(log: EventLog, h: Optional[float] = None, ref: ReferenceMeasure = None,
               runtime_seconds: Optional[float] = None) -> DiscretizedChain:
    """Evaluate the trajectory exactly on a uniform grid.

    Between events the closed-form flow is applied from the last event at or
    before the grid time. At an exact event time the grid holds the event's
    position (continuous) and its post-event velocity.

    Args:
        log: Event log with a positive horizon.
        h: Grid step (default :func:`default_step`).
        ref: Optional reference; its centre overrides the one stored in the log.
        runtime_seconds: Overrides the runtime recorded in ``log.stats``.

    Raises:
        ContractError: if ``h <= 0`` or the log has no horizon.
    """
    if not log.horizon > 0:
        raise ContractError("log has no trajectory to discretize")
    h = default_step(log.horizon) if h is None else float(h)
    if not h > 0:
        raise ContractError("grid step must be positive")
    x_star = log.x_star if ref is None else ref.x_star
    grid = _grid(log.horizon, h)
    if not log.sparse:
        te, X, V = log.dense_arrays()
        xs, vs = _interpolate(te, X, V, grid, log.flow, x_star)
    else:
        d = log.dim
        xs = np.empty((grid.size, d))
        vs = np.empty((grid.size, d))
        coords = np.asarray(log.coords)
        times = np.asarray(log.times)
        xv = np.asarray(log.xs, dtype=float)
        vv = np.asarray(log.vs, dtype=float)
        order = np.argsort(coords, kind="stable")
        bounds = np.searchsorted(coords[order], np.arange(d + 1))
        for i in range(d):
            sel = order[bounds[i]:bounds[i + 1]]
            te = np.concatenate(([0.0], times[sel]))
            X = np.concatenate(([log.x0[i]], xv[sel]))
            V = np.concatenate(([log.v0[i]], vv[sel]))
            xs[:, i], vs[:, i] = _interpolate(te, X, V, grid, log.flow, x_star[i])
    if runtime_seconds is None:
        runtime_seconds = float(log.stats.get("runtime_s", 0.0))
    return DiscretizedChain(grid, xs, vs, runtime_seconds, h)


def state_at(log: EventLog, t: float):
    """Position and velocity of the trajectory at time ``t`` (post-event at event times)."""
    if not 0 <= t <= log.horizon:
        raise ContractError(f"t={t} outside [0, {log.horizon}]")
    grid = np.array([float(t)])
    if not log.sparse:
        te, X, V = log.dense_arrays()
        x, v = _interpolate(te, X, V, grid, log.flow, log.x_star)
        return x[0], v[0]
    x = np.empty(log.dim)
    v = np.empty(log.dim)
    for i in range(log.dim):
        te, X, V = log.coordinate_events(i)
        xi, vi = _interpolate(te, X, V, grid, log.flow, log.x_star[i])
        x[i], v[i] = xi[0], vi[0]
    return x, v


def ess_batch_means(series, n_batches: int = 50) -> float:
    """Effective sample size from the batch-means long-run variance.

    ``ESS = N var(series) / sigma2_BM`` with ``sigma2_BM = b var(batch means)``
    for batches of length ``b = N // n_batches`` (trailing remainder dropped
    from the batches only), clipped to ``[1, N]``.

    Raises:
        ContractError: if the series has fewer than ``2 n_batches`` values.
    """
    x = np.asarray(series, dtype=float).ravel()
    N = x.size
    if N < 2 * n_batches:
        raise ContractError(f"need at least {2 * n_batches} values, got {N}")
    var = float(np.var(x, ddof=1))
    b = N // n_batches
    means = x[: b * n_batches].reshape(n_batches, b).mean(axis=1)
    sigma2 = b * float(np.var(means, ddof=1))
    if var < 1e-300 or sigma2 < 1e-300:
        warnings.warn("degenerate variance: reporting ESS = N", RuntimeWarning, stacklevel=2)
        return float(N)
    return float(min(max(N * var / sigma2, 1.0), N))


def batch_means_se(series, n_batches: int = 50) -> float:
    """Standard error of the mean of ``series`` from batch means."""
    x = np.asarray(series, dtype=float).ravel()
    b = x.size // n_batches
    if b < 1:
        raise ContractError("series too short for the number of batches")
    means = x[: b * n_batches].reshape(n_batches, b).mean(axis=1)
    return float(np.std(means, ddof=1) / math.sqrt(n_batches))


def ess_mean(chain: DiscretizedChain, squared_norm: bool = False, n_batches: int = 50) -> float:
    """ESS averaged over coordinates, or of ``|x|^2`` when ``squared_norm``."""
    if squared_norm:
        return ess_batch_means(np.sum(chain.samples ** 2, axis=1), n_batches)
    return float(np.mean([ess_batch_means(chain.samples[:, i], n_batches)
                          for i in range(chain.dim)]))


def ess_per_second(chain: DiscretizedChain, per_dimension: bool = True,
                   squared_norm: bool = False, n_batches: int = 50,
                   extra_seconds: float = 0.0) -> float:
    """Average ESS divided by runtime.

    Args:
        chain: Discretized trajectory with its runtime.
        per_dimension: Average the per-coordinate ESS (otherwise use the first
            coordinate only).
        squared_norm: Use the ESS of ``|x|^2`` instead.
        extra_seconds: Added to the runtime (e.g. preprocessing).
    """
    runtime = chain.runtime_seconds + extra_seconds
    if not runtime > 0:
        raise ContractError("chain has no recorded runtime")
    if squared_norm or per_dimension:
        ess = ess_mean(chain, squared_norm, n_batches)
    else:
        ess = ess_batch_means(chain.samples[:, 0], n_batches)
    return ess / runtime


# generator residuals -------------------------------------------------------

def _gaussian_moment(k: int, sd):
    """``E[w^k]`` for ``w ~ N(0, sd^2)``."""
    if k % 2:
        return np.zeros_like(np.asarray(sd, dtype=float))
    dfact = 1.0
    for j in range(k - 1, 0, -2):
        dfact *= j
    return dfact * np.asarray(sd, dtype=float) ** k


class PolynomialTestFunction:
    """``psi(x, v) = sum_k c_k prod_i x_i^{a_ki} v_i^{b_ki}``.

    Args:
        terms: Iterable of ``(coefficient, x_powers, v_powers)``.
        name: Label used in reports.
    """

    def __init__(self, terms, name: str = "psi"):
        self.terms = [(float(c), np.asarray(a, dtype=int), np.asarray(b, dtype=int))
                      for c, a, b in terms]
        self.name = name
        self.dim = self.terms[0][1].size

    @staticmethod
    def _mono(X, powers):
        return np.prod(X ** powers, axis=-1)

    def value(self, X, V):
        X, V = np.atleast_2d(X), np.atleast_2d(V)
        return sum(c * self._mono(X, a) * self._mono(V, b) for c, a, b in self.terms)

    def _grad(self, X, V, wrt_x: bool):
        X, V = np.atleast_2d(X), np.atleast_2d(V)
        out = np.zeros(X.shape)
        for c, a, b in self.terms:
            p = a if wrt_x else b
            for i in np.nonzero(p)[0]:
                q = p.copy()
                q[i] -= 1
                base = X if wrt_x else V
                other = self._mono(V, b) if wrt_x else self._mono(X, a)
                out[:, i] += c * p[i] * self._mono(base, q) * other
        return out

    def grad_x(self, X, V):
        return self._grad(X, V, True)

    def grad_v(self, X, V):
        return self._grad(X, V, False)

    def refresh_mean(self, X, sd):
        """``int psi(x, w) N(w; 0, diag(sd^2)) dw``."""
        X = np.atleast_2d(X)
        out = np.zeros(X.shape[0])
        for c, a, b in self.terms:
            out += c * self._mono(X, a) * float(np.prod(
                [_gaussian_moment(int(k), s) for k, s in zip(b, sd)]))
        return out

    def coordinate_refresh_mean(self, X, V, i, sd_i):
        """``int psi(x, v with v_i := w) N(w; 0, sd_i^2) dw``."""
        X, V = np.atleast_2d(X), np.atleast_2d(V)
        out = np.zeros(X.shape[0])
        for c, a, b in self.terms:
            q = b.copy()
            k = int(q[i])
            q[i] = 0
            out += c * self._mono(X, a) * self._mono(V, q) * float(_gaussian_moment(k, sd_i))
        return out


def standard_test_functions(d: int = 1):
    """Six polynomial test functions in the first coordinate (padded to ``d``)."""
    def e(k):
        z = np.zeros(d, dtype=int)
        z[0] = k
        return z

    specs = [("x", e(1), e(0)), ("v", e(0), e(1)), ("xv", e(1), e(1)),
             ("x2", e(2), e(0)), ("x2v", e(2), e(1)), ("xv3", e(1), e(3))]
    return [PolynomialTestFunction([(1.0, a, b)], name) for name, a, b in specs]


def generator_values(model: TargetModel, ref: ReferenceMeasure, lambda_refr: float,
                     test_fn: PolynomialTestFunction, X, V, kind: str = "boomerang"):
    """Pointwise generator ``L psi`` at each row of ``(X, V)``.

    ``kind="boomerang"`` uses the contour reflection and full refreshment;
    ``kind="factorised"`` uses per-coordinate flips and refreshments.
    """
    if not ref.is_diagonal:
        raise ContractError("closed-form refreshment integrals need a diagonal Sigma")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    V = np.atleast_2d(np.asarray(V, dtype=float))
    sd = np.sqrt(ref.diagonal)
    xi = X - ref.x_star
    psi = test_fn.value(X, V)
    drift = np.sum(V * test_fn.grad_x(X, V) - xi * test_fn.grad_v(X, V), axis=1)
    G = np.array([model.grad_U(x) for x in X])
    if kind == "boomerang":
        rate = np.maximum(np.sum(V * G, axis=1), 0.0)
        RV = V.copy()
        for k in np.nonzero(rate > 0)[0]:
            try:
                RV[k] = contour_reflect(xi[k], V[k], G[k], ref)
            except DegenerateGradientError:
                pass
        jump = rate * (test_fn.value(X, RV) - psi)
        refresh = lambda_refr * (test_fn.refresh_mean(X, sd) - psi)
    elif kind == "factorised":
        jump = np.zeros(X.shape[0])
        refresh = np.zeros(X.shape[0])
        for i in range(ref.dim):
            rate_i = np.maximum(V[:, i] * G[:, i], 0.0)
            FV = V.copy()
            FV[:, i] = -FV[:, i]
            jump += rate_i * (test_fn.value(X, FV) - psi)
            refresh += lambda_refr * (test_fn.coordinate_refresh_mean(X, V, i, sd[i]) - psi)
    else:
        raise ContractError(f"unknown generator kind {kind!r}")
    return drift + jump + refresh


def generator_residual(model: TargetModel, ref: ReferenceMeasure, lambda_refr: float,
                       test_fn: PolynomialTestFunction, sample_set, kind: str = "boomerang",
                       n_batches: int = 50):
    """Monte Carlo estimate of ``E_mu[L psi]`` and its batch standard error.

    Args:
        sample_set: ``(X, V)`` drawn from ``pi(x) N(v; 0, Sigma)``.

    Returns:
        ``(estimate, standard_error)``; ``|estimate| <= 4 SE`` is a pass.
    """
    X, V = sample_set
    vals = generator_values(model, ref, lambda_refr, test_fn, X, V, kind)
    est = float(np.mean(vals))
    if np.all(vals == vals[0]):
        return est, 0.0
    return est, batch_means_se(vals, n_batches)


# event accounting ----------------------------------------------------------

def event_stats(log: EventLog, levels: Optional[Sequence[int]] = None) -> dict:
    """Counts per event kind, plus per-coordinate and per-level reflections.

    Args:
        log: Event log.
        levels: Level of each coordinate (e.g. ``FaberSchauderBasis.level``);
            when given, reflections are summed per level and divided by the
            number of coordinates in the level (``2**i``) and by the horizon.
    """
    kinds = {}
    for k in log.kinds:
        kinds[k] = kinds.get(k, 0) + 1
    out = {"n_events": len(log), "by_kind": kinds,
           "n_reflections": kinds.get("reflection", 0) + kinds.get("coordinate_reflection", 0),
           "n_refreshments": kinds.get("refreshment", 0),
           "n_shadow": int(log.stats.get("n_shadow", 0))}
    if log.sparse or levels is not None:
        per = np.zeros(log.dim, dtype=np.int64)
        for k, c in zip(log.kinds, log.coords):
            if c >= 0 and k == "coordinate_reflection":
                per[c] += 1
        out["reflections_per_coordinate"] = per
        if levels is not None:
            levels = np.asarray(levels)
            n_lev = int(levels.max()) + 1
            summed = np.bincount(levels, weights=per, minlength=n_lev)
            size = np.bincount(levels, minlength=n_lev)
            out["reflections_per_level"] = summed / size / log.horizon
    return out


# KS helpers ---------------------------------------------------------------

def ks_pvalues(samples: np.ndarray, cdfs) -> np.ndarray:
    """Kolmogorov-Smirnov p-values of each column against the given CDFs."""
    from scipy import stats

    samples = np.atleast_2d(samples)
    if callable(cdfs):
        cdfs = [cdfs] * samples.shape[1]
    return np.array([stats.kstest(samples[:, i], cdfs[i]).pvalue
                     for i in range(samples.shape[1])])


def thin_chain(chain: DiscretizedChain, spacing: float) -> np.ndarray:
    """Grid samples ``spacing`` time units apart (approximately independent draws)."""
    step = max(int(round(spacing / chain.h)), 1)
    return chain.samples[::step]


# stats CSV -----------------------------------------------------------------

STATS_COLUMNS = ["sampler", "target", "n", "d", "seed", "ess_mean", "ess_per_sec",
                 "ess_per_sec_incl_pre", "n_reflections", "n_refresh", "n_shadow",
                 "runtime_s", "preprocess_s"]


def write_stats_csv(path, rows, columns=STATS_COLUMNS) -> None:
    """Write rows (dicts) with a ``# columns:`` schema comment line first."""
    with open(path, "w", newline="") as fh:
        fh.write("# columns: " + ",".join(columns) + "\n")
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k, "")) for k in columns})


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def read_stats_csv(path):
    with open(path, newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(lines))

