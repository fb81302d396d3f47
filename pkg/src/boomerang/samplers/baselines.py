"""Baseline samplers targeting a Lebesgue density ``exp(-E)``.

``model_E`` is either an energy object (``energy``, ``grad``, ``partial`` and
``hessian_range`` / ``hessian_entry_range`` for bounds) or a
:class:`~boomerang.core.TargetModel`, whose energy is recovered as
``E = U + |Sigma^{-1/2}(x - x_star)|^2 / 2``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from ..core import ContractError, EnergyTarget, ReferenceMeasure, TargetModel
from ..events import VIOLATION_TOL, EventKind, contour_reflect, thinning_accept
from .eventlog import EventLog, SamplerConfig
from .factorised import LocalEngine, _coordinate_reflection_counts, _event_time, _run_local


class _TargetEnergy:
    """Energy view ``E = U + quadratic`` of a target relative to a reference."""

    def __init__(self, target: TargetModel):
        self.target = target
        self.ref = target.ref
        self.dim = target.dim

    def energy(self, x):
        return self.target.U(x) + 0.5 * self.ref.sigma_inv_norm_sq(x - self.ref.x_star)

    def grad(self, x):
        return self.target.grad_U(x) + self.ref.sigma_inv_dot(x - self.ref.x_star)

    def partial(self, i, x):
        xi = x - self.ref.x_star
        return self.target.partial_U(i, x) + float(self.ref.sigma_inv[i] @ xi)

    def hessian_range(self):
        # Hess E = Sigma^{-1} + Hess U with |Hess U| <= M
        M = self.target.bound_constants().M
        if M is None:
            raise ContractError("target supplies no Hessian bound M")
        S = self.ref.sigma_inv
        return S - M * np.eye(self.dim), S + M * np.eye(self.dim)

    def hessian_entry_range(self):
        # entries of row i of Hess U are bounded by its norm bound M_i
        M_i = self.target.bound_constants().M_i
        if M_i is None:
            raise ContractError("target supplies no per-row Hessian bounds M_i")
        S = self.ref.sigma_inv
        band = np.asarray(M_i, dtype=float)[:, None] * np.ones(self.dim)
        return S - band, S + band


def as_energy(model_E):
    """Return an object with ``energy/grad/partial`` for ``model_E``."""
    if isinstance(model_E, EnergyTarget):
        return model_E.energy
    if isinstance(model_E, TargetModel):
        return _TargetEnergy(model_E)
    return model_E


def rescale_velocity_for_comparison(sampler_kind: str, ref: ReferenceMeasure,
                                    n_draws: int = 10_000, rng=None) -> float:
    """Speed scale matching the Boomerang's mean Euclidean speed ``E|v|``, ``v ~ N(0, Sigma)``.

    Args:
        sampler_kind: ``"zigzag"`` (returns the per-coordinate speed ``s`` with
            ``s sqrt(d) = E|v|``), ``"bps_unit"`` (multiplier for unit-norm
            velocities) or ``"bps"`` (multiplier for ``N(0, I)`` velocities).
        ref: Reference measure of the Boomerang run being matched.
        n_draws: Monte Carlo sample size.

    Returns:
        The speed scale.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    z = rng.standard_normal((n_draws, ref.dim))
    if ref.is_diagonal:
        v = z * np.sqrt(ref.diagonal)
    else:
        v = z @ ref.sigma_factor.T
    mean_speed = float(np.linalg.norm(v, axis=1).mean())
    if sampler_kind == "zigzag":
        return mean_speed / math.sqrt(ref.dim)
    if sampler_kind == "bps_unit":
        return mean_speed
    if sampler_kind == "bps":
        return mean_speed / float(np.linalg.norm(z, axis=1).mean())
    raise ContractError(f"unknown sampler kind {sampler_kind!r}")


def _hessian_upper(energy) -> float:
    if not hasattr(energy, "hessian_range"):
        raise ContractError("BPS bounds need the energy's hessian_range")
    _, hi = energy.hessian_range()
    return max(float(np.linalg.eigvalsh(hi)[-1]), 0.0)


def run_bps(model_E, config: SamplerConfig = None, x0=None, velocity: str = "gaussian",
            speed: float = 1.0, metric: ReferenceMeasure = None) -> EventLog:
    """Bouncy particle sampler with linear flow and Poisson thinning.

    Reflection ``v - 2 <v, g> / |g|^2 g`` happens at rate ``<v, grad E>_+`` and
    velocities refresh at ``config.refresh_rate``. The affine bound is
    ``<v, grad E(x0)>_+ + t M |v|^2`` with ``M`` the largest eigenvalue of the
    energy's Hessian upper bound; the constant strategy is not available
    because the rate is unbounded along straight lines.

    Args:
        model_E: Energy object or target model.
        config: Sampler settings.
        velocity: ``"gaussian"`` for ``N(0, I)`` refreshment or ``"unit"`` for
            uniform directions on the sphere.
        speed: Multiplier applied to every refreshed velocity.
        metric: Optional reference measure; when given, velocities are drawn
            from ``N(0, Sigma)`` and reflections use the ``Sigma`` geometry.
    """
    config = config or SamplerConfig(refresh_rate=1.0)
    energy = as_energy(model_E)
    rng = np.random.default_rng(config.rng_seed)
    t_start = time.perf_counter()
    d = energy.dim
    # d/dt <v, grad E(x + t v)> = <v, Hess E v> <= M |v|^2 for any velocity law
    M = _hessian_upper(energy)

    def draw_v():
        z = rng.standard_normal(d)
        if velocity == "unit":
            z /= np.linalg.norm(z)
        elif velocity != "gaussian":
            raise ContractError(f"unknown velocity law {velocity!r}")
        if metric is not None:
            z = metric.colour(z)
        return speed * z

    x = rng.standard_normal(d) if x0 is None else np.array(x0, dtype=float)
    v = draw_v()
    log = EventLog(x, v, np.zeros(d), flow="linear")
    horizon, lam, strict, scale = (config.time_horizon, config.refresh_rate,
                                   config.strict_bounds, config.bound_scale)
    t = 0.0
    t_refresh = rng.exponential(1.0 / lam)
    g = energy.grad(x)
    n_prop = n_refl = n_refr = n_viol = 0
    compensator = 0.0
    while True:
        vv = float(v @ v)
        a = scale * max(float(v @ g), 0.0)
        b = scale * M * vv
        tau = _event_time(a, b, rng.standard_exponential())
        refresh = t_refresh < t + tau
        t_next = min(t_refresh if refresh else t + tau, horizon)
        dt = t_next - t
        compensator += a * dt + 0.5 * b * dt * dt
        x = x + dt * v
        t = t_next
        if t >= horizon:
            break
        if refresh:
            v = draw_v()
            n_refr += 1
            log.append(t, EventKind.REFRESHMENT.value, x, v)
            t_refresh = t + rng.exponential(1.0 / lam)
            # the position has moved since the last gradient evaluation
            g = energy.grad(x)
            continue
        n_prop += 1
        g = energy.grad(x)
        rate = max(float(v @ g), 0.0)
        bound_now = a + b * tau
        if rate > bound_now * (1.0 + VIOLATION_TOL):
            n_viol += 1
        if thinning_accept(rate, bound_now, rng, strict=strict):
            if metric is None:
                v = v - (2.0 * float(v @ g) / float(g @ g)) * g
            else:
                v = contour_reflect(x, v, g, metric)
            n_refl += 1
            log.append(t, EventKind.REFLECTION.value, x, v)
    log.x_end, log.v_end, log.horizon = x, v, horizon
    log.stats = dict(sampler="bps", n_proposals=n_prop, n_reflections=n_refl,
                     n_refreshments=n_refr, n_shadow=n_prop - n_refl, n_violations=n_viol,
                     bound_integral=compensator, runtime_s=time.perf_counter() - t_start)
    return log


def run_zigzag(model_E, config: SamplerConfig = None, x0=None, speed: float = 1.0) -> EventLog:
    """Zig-Zag sampler: velocities in ``{-s, s}^d``, coordinate flips at ``(v_k d_k E)_+``.

    Bounds are affine per coordinate: ``(v_k d_k E(x0))_+ + t s^2 sum_j L_kj`` with
    ``L`` an entrywise bound on the Hessian of ``E``. For a diffusion-bridge
    target with ``config.subsample`` the rate uses the single-point estimate
    ``x_k + d_k U^`` and the bound ``(v_k x_k)_+ + s m_k + s^2 t``. There is no
    refreshment; ``config.refresh_rate`` is ignored.
    """
    config = config or SamplerConfig()
    rng = np.random.default_rng(config.rng_seed)
    t_start = time.perf_counter()
    scale = config.bound_scale
    s = float(speed)
    if not s > 0:
        raise ContractError("speed must be positive")
    bridge = config.subsample and hasattr(model_E, "local_subsampled_partial")
    if config.subsample and not bridge:
        raise ContractError("model has no local subsampled partial derivatives")
    if bridge:
        d = model_E.dim
        # the bridge coefficient law is N(0, I) tilted by exp(-U)
        X0 = rng.standard_normal(d) if x0 is None else np.asarray(x0, float)
    else:
        energy = as_energy(model_E)
        d = energy.dim
        X0 = rng.standard_normal(d) if x0 is None else np.asarray(x0, float)
    signs = np.where(rng.random(d) < 0.5, -s, s)
    engine = LocalEngine(X0, signs, "linear")
    X, V = engine.X, engine.V

    if bridge:
        m = (np.asarray(model_E.m, float)).tolist()
        clock = [0.0]

        def get(j):
            engine.sync(j, clock[0])
            return X[j]

        def rate_partial(k, t):
            clock[0] = t
            return X[k] + model_E.local_subsampled_partial(k, get, rng)

        def issue(k, t, p):
            engine.sync(k, t)
            return scale * (max(V[k] * X[k], 0.0) + s * m[k]), scale * s * s
    else:
        if not hasattr(energy, "hessian_entry_range"):
            raise ContractError("Zig-Zag bounds need the energy's hessian_entry_range")
        lo, hi = energy.hessian_entry_range()
        L = np.maximum(np.abs(lo), np.abs(hi)).sum(axis=1) * s * s
        L = L.tolist()

        def rate_partial(k, t):
            engine.sync_all(t)
            return float(energy.partial(k, np.array(X)))

        def issue(k, t, p):
            if p is None:
                p = rate_partial(k, t)
            return scale * max(V[k] * p, 0.0), scale * L[k]

    log = EventLog(X0, signs, np.zeros(d), flow="linear")
    stats = {"sampler": "zigzag", "speed": s}
    _run_local(engine, config, rng, rate_partial=rate_partial, issue=issue,
               reissue_all_on_refresh=False, refresh_sd=None, x_star=[0.0] * d,
               log=log, stats=stats)
    log.x_end, log.v_end = np.array(X), np.array(V)
    log.horizon = config.time_horizon
    stats["reflections_per_coordinate"] = _coordinate_reflection_counts(log, d).tolist()
    stats["runtime_s"] = time.perf_counter() - t_start
    log.stats = stats
    return log


@dataclass
class MALAResult:
    samples: np.ndarray
    acceptance_rate: float
    step_size: float
    runtime_s: float = 0.0


def run_mala(model_E, step_size: float, n_iter: int, rng, x0=None, warmup: int = 0,
             target_accept: float = 0.574, noise: bool = True) -> MALAResult:
    """Metropolis-adjusted Langevin algorithm.

    Proposal ``y = x - h grad E(x) + sqrt(2h) z``. During ``warmup`` iterations
    (discarded) the step is multiplied by 1.02 while a moving average of the
    acceptance indicator exceeds ``target_accept`` and divided by 1.02
    otherwise; it is frozen afterwards.

    Args:
        model_E: Energy object or target model.
        step_size: Initial step ``h > 0`` (``0`` is allowed with ``noise=False``).
        n_iter: Number of retained iterations.
        rng: ``numpy.random.Generator``.
        x0: Starting point (default: origin).
        warmup: Number of adaptation iterations.
        noise: Set ``False`` to make the proposal deterministic.

    Returns:
        :class:`MALAResult` with the ``(n_iter, d)`` samples and the retained
        acceptance rate.
    """
    if step_size < 0 or (step_size == 0 and noise):
        raise ContractError("step_size must be positive")
    energy = as_energy(model_E)
    t_start = time.perf_counter()
    d = energy.dim
    x = np.zeros(d) if x0 is None else np.array(x0, dtype=float)
    fx, gx = energy.energy(x), energy.grad(x)
    h = float(step_size)
    out = np.empty((n_iter, d))
    n_acc = 0
    avg_acc = target_accept
    for it in range(warmup + n_iter):
        z = rng.standard_normal(d) if noise else np.zeros(d)
        mean_x = x - h * gx
        y = mean_x + math.sqrt(2 * h) * z
        fy, gy = energy.energy(y), energy.grad(y)
        if h > 0:
            mean_y = y - h * gy
            log_q_xy = -float((y - mean_x) @ (y - mean_x)) / (4 * h)
            log_q_yx = -float((x - mean_y) @ (x - mean_y)) / (4 * h)
        else:
            log_q_xy = log_q_yx = 0.0
        log_alpha = fx - fy + log_q_yx - log_q_xy
        accept = math.log(rng.random()) < log_alpha
        if accept:
            x, fx, gx = y, fy, gy
        if it < warmup:
            avg_acc = 0.98 * avg_acc + 0.02 * accept
            h = h * 1.02 if avg_acc > target_accept else h / 1.02
        else:
            n_acc += accept
            out[it - warmup] = x
    return MALAResult(out, n_acc / max(n_iter, 1), h, time.perf_counter() - t_start)
