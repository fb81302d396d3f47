"""Boomerang sampler with full or subsampled gradients.

The loop works in centred coordinates ``xi = x - x_star`` so the flow is a
plain rotation. Each iteration issues a bound from the current state, draws a
candidate reflection time from it and races it against the refreshment clock.
"""

from __future__ import annotations

import math
import time
import warnings

import numpy as np

from ..core import ContractError, EnergyTarget, ReferenceMeasure, TargetModel
from ..events import (VIOLATION_TOL, BoundViolationError, BoundViolationWarning,
                      DegenerateGradientError, EventKind, contour_reflect)
from ..subsampling import ControlVariateCache, cv_estimator
from .eventlog import EventLog, SamplerConfig
from . import compiled
from .streams import RandomStream


def _resolve_model(model: TargetModel, ref: ReferenceMeasure):
    if ref is None or ref is model.ref:
        return model, model.ref
    if isinstance(model, EnergyTarget):
        return EnergyTarget(model.energy, ref), ref
    raise ContractError("model potential is tied to a different reference measure")


def _initial_state(ref: ReferenceMeasure, rng, x0, v0):
    if x0 is None:
        xi = ref.colour(rng.standard_normal(ref.dim))
    else:
        xi = np.array(x0, dtype=float) - ref.x_star
    if v0 is None:
        v = ref.colour(rng.standard_normal(ref.dim))
    else:
        v = np.array(v0, dtype=float)
    if xi.shape != (ref.dim,) or v.shape != (ref.dim,):
        raise ContractError("initial state has the wrong dimension")
    return xi, v


class _Bounds:
    """Issues ``(a, b)`` for the full-gradient sampler from a centred state.

    ``issue(r2, vg)`` takes the squared radius ``|xi|^2 + |v|^2`` and
    ``<v, grad U(x)>`` at the issue point; only the affine bound uses the latter.
    """

    def __init__(self, model: TargetModel, strategy: str, scale: float):
        c = model.bound_constants()
        self.scale = scale
        self.model = model
        self.affine = strategy == "affine"
        if self.affine:
            if c.M is None or c.m is None:
                raise ContractError("affine bounds need a Hessian bound M and m = |grad U(x_star)|")
            self.M, self.m = c.M, c.m
            self.mode = "hessian"
        elif c.M is not None and c.m is not None:
            self.M, self.m = c.M, c.m
            self.mode = "hessian"
        elif c.C is not None:
            self.C = c.C
            self.mode = "gradient"
        elif model.gradient_bound_on_ball(1.0) is not None:
            self.mode = "ball"
        else:
            raise ContractError("model supplies no constants for a constant bound")

    def issue(self, r2, vg):
        r = math.sqrt(r2)
        s = self.scale
        if self.affine:
            return s * max(vg, 0.0), s * (self.M * r2 + self.m * r)
        if self.mode == "hessian":
            return s * (0.5 * self.M * r2 + self.m * r), 0.0
        if self.mode == "gradient":
            return s * self.C * r, 0.0
        return s * r * self.model.gradient_bound_on_ball(r), 0.0


def _event_time(a, b, E):
    if b > 0:
        den = a + math.sqrt(a * a + 2.0 * b * E)
        return 2.0 * E / den if den > 0 else math.sqrt(2.0 * E) / math.sqrt(b)
    if a > 0:
        return E / a
    return math.inf


def _accept(rate, bound, stream, strict):
    """Thinning decision; returns ``(accepted, violated)``."""
    if rate <= 0.0:
        return False, False
    ratio = rate / bound if bound > 0 else math.inf
    if ratio > 1.0 + VIOLATION_TOL:
        msg = f"realized rate {rate!r} exceeds bound {bound!r}"
        if strict:
            raise BoundViolationError(msg)
        warnings.warn(msg, BoundViolationWarning, stacklevel=3)
        return True, True
    return stream.unif() < ratio, False


class _Counters:
    __slots__ = ("prop", "refl", "refr", "viol", "degen", "comp")

    def __init__(self):
        self.prop = self.refl = self.refr = self.viol = self.degen = 0
        self.comp = 0.0

    def to_stats(self, stats):
        stats.update(n_proposals=self.prop, n_reflections=self.refl, n_refreshments=self.refr,
                     n_shadow=self.prop - self.refl, n_violations=self.viol,
                     n_degenerate=self.degen, bound_integral=self.comp)


def _loop(ref, config, rng, stream, xi, v, gradient, issue, log: EventLog, stats: dict):
    """Generic thinning loop in centred coordinates.

    ``gradient(xi)`` returns the (possibly estimated) gradient used for both
    the rate and the reflection at a proposal. ``issue(r2, vg, xi, v)`` returns
    ``(a, b, affine)``; when ``affine`` is true the loop keeps the gradient at
    the issue point current, so that ``vg = <v, grad>`` there.
    """
    horizon = config.time_horizon
    inv_lam = 1.0 / config.refresh_rate
    strict = config.strict_bounds
    x_star = ref.x_star
    cnt = _Counters()
    t = 0.0
    t_refresh = stream.exp() * inv_lam
    r2 = float(xi @ xi + v @ v)
    a, b, affine = issue(r2, None, xi, v)
    if affine:
        a, b, _ = issue(r2, float(v @ gradient(xi)), xi, v)
    while True:
        tau = _event_time(a, b, stream.exp())
        refresh = t_refresh < t + tau
        t_next = t_refresh if refresh else t + tau
        if t_next > horizon:
            t_next = horizon
        dt = t_next - t
        cnt.comp += a * dt + 0.5 * b * dt * dt
        if dt > 0:
            c, s = math.cos(dt), math.sin(dt)
            xi, v = xi * c + v * s, v * c - xi * s
        t = t_next
        if t >= horizon:
            break
        if refresh:
            v = ref.colour(rng.standard_normal(ref.dim))
            cnt.refr += 1
            log.append(t, EventKind.REFRESHMENT.value, xi + x_star, v)
            t_refresh = t + stream.exp() * inv_lam
            r2 = float(xi @ xi + v @ v)
            a, b, affine = issue(r2, float(v @ gradient(xi)) if affine else None, xi, v)
            continue
        cnt.prop += 1
        g = gradient(xi)
        vg = float(v @ g)
        bound_now = a + b * tau
        accepted, violated = _accept(vg, bound_now, stream, strict)
        cnt.viol += violated
        if accepted:
            try:
                v = contour_reflect(xi, v, g, ref)
            except DegenerateGradientError:
                # rate > 0 needs grad != 0; only reachable through round-off
                cnt.degen += 1
                accepted = False
            else:
                cnt.refl += 1
                log.append(t, EventKind.REFLECTION.value, xi + x_star, v)
                r2 = float(xi @ xi + v @ v)
                # the reflection flips the sign of <v, grad>
                vg = -vg
        a, b, affine = issue(r2, vg, xi, v)
    cnt.to_stats(stats)
    return xi, v


def _glm_loop(ref, config, rng, stream, xi, v, cache, bound_fn, log: EventLog, stats: dict):
    """Subsampled loop for generalised-linear per-term energies.

    Between velocity changes the constant bound does not change, so shadow
    proposals are evaluated from the state at the last velocity change and the
    elapsed rotation angle using scalar arithmetic only. Random numbers are
    consumed in the same order as :func:`_loop`.
    """
    horizon = config.time_horizon
    inv_lam = 1.0 / config.refresh_rate
    strict = config.strict_bounds
    x_star = ref.x_star
    glm = cache.glm
    rows, mean, a_ref, m_ref, sl_ref = glm.rows, glm.mean, glm.a_ref, glm.mean_ref, glm.slope_ref
    n = cache.n
    g_star = cache.grad_at_ref_full
    C = cache.correction
    cnt = _Counters()
    cos, sin = math.cos, math.sin

    def anchor(xi_, v_):
        # scalars that describe the trajectory until the next velocity change
        X0, V0 = xi_.tolist(), v_.tolist()
        vg0, xg0 = float(v_ @ g_star), float(xi_ @ g_star)
        if C is None:
            return X0, V0, vg0, xg0, 0.0, 0.0
        Cx = C @ xi_
        return X0, V0, vg0, xg0, float(v_ @ Cx), float(v_ @ (C @ v_)) - float(xi_ @ Cx)

    t = 0.0
    t_refresh = stream.exp() * inv_lam
    t_anchor = 0.0
    X0, V0, vg0, xg0, B, D = anchor(xi, v)
    a = bound_fn(float(xi @ xi + v @ v))
    while True:
        tau = _event_time(a, 0.0, stream.exp())
        refresh = t_refresh < t + tau
        t_next = t_refresh if refresh else t + tau
        if t_next > horizon:
            t_next = horizon
        cnt.comp += a * (t_next - t)
        t = t_next
        if t >= horizon:
            break
        if refresh:
            h = t - t_anchor
            c, s = cos(h), sin(h)
            xi = c * np.array(X0) + s * np.array(V0)
            v = ref.colour(rng.standard_normal(ref.dim))
            cnt.refr += 1
            log.append(t, EventKind.REFRESHMENT.value, xi + x_star, v)
            t_refresh = t + stream.exp() * inv_lam
            t_anchor = t
            X0, V0, vg0, xg0, B, D = anchor(xi, v)
            a = bound_fn(float(xi @ xi + v @ v))
            continue
        cnt.prop += 1
        i = stream.index(n)
        row = rows[i]
        p = q = 0.0
        for yk, xk, vk in zip(row, X0, V0):
            p += yk * xk
            q += yk * vk
        h = t - t_anchor
        c, s = cos(h), sin(h)
        u = c * p + s * q
        yv = c * q - s * p
        ai = a_ref[i]
        w = n * (mean(ai + u) - m_ref[i] - sl_ref[i] * u)
        rate = yv * w + c * vg0 - s * xg0
        if C is not None:
            rate += (c * c - s * s) * B + c * s * D
        accepted, violated = _accept(rate, a, stream, strict)
        cnt.viol += violated
        if not accepted:
            continue
        X, V = np.array(X0), np.array(V0)
        xi = c * X + s * V
        v = c * V - s * X
        G = w * glm.design[i] + g_star
        if C is not None:
            G = G + C @ xi
        try:
            v = contour_reflect(xi, v, G, ref)
        except DegenerateGradientError:
            cnt.degen += 1
            # keep the anchored trajectory; only the proposal is dropped
            continue
        cnt.refl += 1
        log.append(t, EventKind.REFLECTION.value, xi + x_star, v)
        t_anchor = t
        X0, V0, vg0, xg0, B, D = anchor(xi, v)
        a = bound_fn(float(xi @ xi + v @ v))
    h = t - t_anchor
    c, s = cos(h), sin(h)
    X, V = np.array(X0), np.array(V0)
    cnt.to_stats(stats)
    return c * X + s * V, c * V - s * X


def _compiled_loop(ref, config, stream, rng, xi, v, arrays, bounds, log: EventLog, stats: dict):
    """Same process as :func:`_loop` for logistic targets, rejections run compiled."""
    Y, z, prec = arrays
    horizon = config.time_horizon
    inv_lam = 1.0 / config.refresh_rate
    strict = config.strict_bounds
    x_star = np.ascontiguousarray(ref.x_star, dtype=float)
    S = np.ascontiguousarray(ref.sigma_inv, dtype=float)
    xi, v = np.array(xi, dtype=float), np.array(v, dtype=float)
    g = np.zeros_like(xi)
    counts = np.zeros(2)
    cnt = _Counters()
    n_grad = 0
    M = float(getattr(bounds, "M", 0.0))
    m = float(getattr(bounds, "m", 0.0))

    def grad_now():
        out = np.zeros_like(xi)
        compiled.logistic_grad_U(xi, x_star, Y, z, prec, S, out)
        return out

    t = 0.0
    t_refresh = stream.exp() * inv_lam
    r2 = float(xi @ xi + v @ v)
    affine = bounds.affine
    if affine:
        n_grad += 1
        a, b = bounds.issue(r2, float(v @ grad_now()))
    else:
        a, b = bounds.issue(r2, 0.0)
    while True:
        status, t, tau, a, b, vg, stream.epos, stream.upos = compiled.thin(
            xi, v, g, t, t_refresh, a, b, r2, horizon, affine, bounds.scale, M, m,
            VIOLATION_TOL, stream.ebuf, stream.epos, stream.ubuf, stream.upos,
            x_star, Y, z, prec, S, counts)
        if status == compiled.NEED_EXP:
            stream.refill_exp()
            continue
        if status == compiled.HORIZON:
            break
        if status == compiled.REFRESH:
            v = ref.colour(rng.standard_normal(ref.dim))
            cnt.refr += 1
            log.append(t, EventKind.REFRESHMENT.value, xi + x_star, v)
            t_refresh = t + stream.exp() * inv_lam
            r2 = float(xi @ xi + v @ v)
            if affine:
                n_grad += 1
                a, b = bounds.issue(r2, float(v @ grad_now()))
            else:
                a, b = bounds.issue(r2, 0.0)
            continue
        if status == compiled.ACCEPT:
            accepted, violated = True, False
        else:
            accepted, violated = _accept(vg, a + b * tau, stream, strict)
        cnt.viol += violated
        if accepted:
            try:
                v = contour_reflect(xi, v, g, ref)
            except DegenerateGradientError:
                cnt.degen += 1
            else:
                cnt.refl += 1
                log.append(t, EventKind.REFLECTION.value, xi + x_star, v)
                r2 = float(xi @ xi + v @ v)
                vg = -vg
        a, b = bounds.issue(r2, vg)
    cnt.prop = int(counts[0])
    cnt.comp = float(counts[1])
    cnt.to_stats(stats)
    stats["n_grad_evals"] = n_grad + cnt.prop
    return xi, v


def _finish(log, xi, v, ref, config, stats, t0):
    log.x_end = xi + ref.x_star
    log.v_end = v
    log.horizon = config.time_horizon
    stats["runtime_s"] = time.perf_counter() - t0
    log.stats = stats
    return log


def run_boomerang(model: TargetModel, ref: ReferenceMeasure = None, config: SamplerConfig = None,
                  x0=None, v0=None, fast: bool = True) -> EventLog:
    """Simulate the Boomerang sampler with exact gradients.

    Args:
        model: Target potential ``U`` relative to ``ref``.
        ref: Reference measure; defaults to ``model.ref``. An :class:`EnergyTarget`
            is re-expressed relative to a different ``ref`` when one is given.
        config: Sampler settings; ``bound_strategy`` picks affine (Hessian
            bound) or constant bounds.
        x0, v0: Optional initial state; drawn from the reference otherwise.
        fast: Run rejected proposals in a compiled loop when the energy is a
            logistic regression. Both paths give the same process.

    Returns:
        The :class:`EventLog` of refreshments and reflections on ``[0, T]``.

    Raises:
        BoundViolationError: under ``strict_bounds`` when a bound fails.
    """
    config = config or SamplerConfig()
    model, ref = _resolve_model(model, ref)
    arrays = None
    if fast and isinstance(model, EnergyTarget) and hasattr(model.energy, "logistic_arrays"):
        arrays = model.energy.logistic_arrays()
        compiled.warm_up()
    rng = np.random.default_rng(config.rng_seed)
    t0 = time.perf_counter()
    xi, v = _initial_state(ref, rng, x0, v0)
    bounds = _Bounds(model, config.bound_strategy, config.bound_scale)
    if arrays is not None and bounds.mode == "hessian":
        log = EventLog(xi + ref.x_star, v, ref.x_star, flow="elliptical")
        stats = {"sampler": "boomerang"}
        xi, v = _compiled_loop(ref, config, compiled.ArrayStream(rng), rng, xi, v, arrays,
                               bounds, log, stats)
        return _finish(log, xi, v, ref, config, stats, t0)
    x_star = ref.x_star
    n_grad = [0]

    if isinstance(model, EnergyTarget):
        energy_grad, s_inv = model.energy.grad, ref.sigma_inv

        def grad(xi_):
            n_grad[0] += 1
            return energy_grad(xi_ + x_star) - s_inv @ xi_
    else:
        def grad(xi_):
            n_grad[0] += 1
            return model.grad_U(xi_ + x_star)

    def issue(r2, vg, _xi, _v):
        a, b = bounds.issue(r2, vg if vg is not None else 0.0)
        return a, b, bounds.affine

    log = EventLog(xi + x_star, v, x_star, flow="elliptical")
    stats = {"sampler": "boomerang"}
    xi, v = _loop(ref, config, rng, RandomStream(rng), xi, v, grad, issue, log, stats)
    stats["n_grad_evals"] = n_grad[0]
    return _finish(log, xi, v, ref, config, stats, t0)


def run_subsampled_boomerang(model: TargetModel, ref: ReferenceMeasure = None,
                             cache: ControlVariateCache = None, config: SamplerConfig = None,
                             x0=None, v0=None, fast: bool = True) -> EventLog:
    """Boomerang sampler driven by single-term control-variate gradient estimates.

    At every candidate event a fresh index ``I`` is drawn uniformly; the
    candidate is accepted with probability ``<v, G^I>_+ / bound`` and, if
    accepted, the velocity is reflected through the same ``G^I``. Bounds are
    the constant subsampling bound (no useful affine bound exists here).

    Args:
        model: Sum-structured target, ``E = (1/n) sum_i E^i``.
        ref: Reference measure (defaults to ``model.ref``).
        cache: Prebuilt :class:`ControlVariateCache`; built here if omitted.
        config: Sampler settings.
        fast: Use the scalar shadow-proposal path when the model has
            generalised-linear terms. Both paths give the same process.
    """
    config = config or SamplerConfig()
    model, ref = _resolve_model(model, ref)
    if model.n_terms <= 0:
        raise ContractError("subsampling needs a sum-structured model")
    rng = np.random.default_rng(config.rng_seed)
    t0 = time.perf_counter()
    if cache is None:
        cache = ControlVariateCache(model, ref)
    elif cache.ref is not ref and not np.array_equal(cache.ref.x_star, ref.x_star):
        raise ContractError("control-variate cache was built for another reference")
    Q = model.bound_constants().Q
    if Q is None:
        raise ContractError("model supplies no per-term Hessian variation bound")
    xi, v = _initial_state(ref, rng, x0, v0)
    scale = config.bound_scale
    gnorm = cache.grad_at_ref_norm
    corr = cache.correction_norm
    n = model.n_terms

    def bound_fn(r2):
        return scale * (0.5 * (Q + corr) * r2 + math.sqrt(r2) * gnorm)

    def issue(r2, _vg, _xi, _v):
        return bound_fn(r2), 0.0, False

    stream = RandomStream(rng)

    def estimate(xi_):
        return cv_estimator(xi_, stream.index(n), cache, model)

    log = EventLog(xi + ref.x_star, v, ref.x_star, flow="elliptical")
    stats = {"sampler": "subsampled_boomerang"}
    if cache.glm is not None and fast:
        xi, v = _glm_loop(ref, config, rng, stream, xi, v, cache, bound_fn, log, stats)
    else:
        xi, v = _loop(ref, config, rng, stream, xi, v, estimate, issue, log, stats)
    stats["n_term_evals"] = stats["n_proposals"]
    return _finish(log, xi, v, ref, config, stats, t0)
