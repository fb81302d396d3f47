"""Fast invariant suite behind ``boomerang check``.

Every check returns a list of failure messages; an empty list is a pass.
``bound_scale`` multiplies every issued computational bound and exists for
fault injection: a value below one must make the bounds check fail.
"""

from __future__ import annotations

import math
import time

import numpy as np

from ..core import EnergyTarget, ReferenceMeasure
from ..diagnostics import generator_residual, standard_test_functions
from ..dynamics import TWO_PI, flow_centred
from ..events import BoundViolationError, contour_reflect
from ..models import (BridgeModel, FaberSchauderBasis, LogisticEnergy, gaussian_target,
                      generate_logistic_data)
from ..samplers import (SamplerConfig, run_boomerang, run_factorised_boomerang,
                        run_subsampled_boomerang)
from ..subsampling import ControlVariateCache, build_preconditioner, cv_estimator, naive_estimator

TOL = 1e-10


def _random_spd(rng, d):
    A = rng.standard_normal((d, d))
    return A @ A.T + 0.5 * np.eye(d)


def check_reflection(rng, n=1000, **_):
    """Sign flip of ``<v, grad>``, conservation of ``|v|_Sigma`` and involution."""
    fails = []
    worst = 0.0
    for _ in range(n):
        d = int(rng.integers(1, 6))
        ref = ReferenceMeasure(rng.standard_normal(d), _random_spd(rng, d))
        x, v, g = rng.standard_normal((3, d))
        w = contour_reflect(x, v, g, ref)
        scale = 1.0 + abs(float(v @ g)) + ref.sigma_inv_norm_sq(v)
        err = max(abs(float(w @ g) + float(v @ g)),
                  abs(ref.sigma_inv_norm_sq(w) - ref.sigma_inv_norm_sq(v)),
                  float(np.max(np.abs(contour_reflect(x, w, g, ref) - v))))
        worst = max(worst, err / scale)
    if worst > TOL:
        fails.append(f"reflection identity error {worst:.2e} > {TOL:g}")
    return fails


def check_flow(rng, n=1000, **_):
    """Conserved quadratic form, period ``2 pi`` and the group property."""
    worst = 0.0
    for _ in range(n):
        d = int(rng.integers(1, 6))
        xi, v = rng.standard_normal((2, d))
        Q = _random_spd(rng, d)
        s, t = rng.uniform(0, 10, size=2)
        x1, v1 = flow_centred(xi, v, s)
        inv0 = xi @ Q @ xi + v @ Q @ v
        inv1 = x1 @ Q @ x1 + v1 @ Q @ v1
        xp, vp = flow_centred(xi, v, TWO_PI)
        xa, va = flow_centred(*flow_centred(xi, v, s), t)
        xb, vb = flow_centred(xi, v, s + t)
        scale = 1.0 + inv0
        err = max(abs(inv1 - inv0) / scale,
                  float(np.max(np.abs(np.r_[xp - xi, vp - v]))) / math.sqrt(scale),
                  float(np.max(np.abs(np.r_[xa - xb, va - vb]))) / math.sqrt(scale))
        worst = max(worst, err)
    return [f"flow invariant error {worst:.2e} > {TOL:g}"] if worst > TOL else []


def check_estimators(rng, n_points=100, **_):
    """Averages over all terms of both gradient estimators equal ``grad U``."""
    data, _ = generate_logistic_data(50, 3, rng, prior_variance=1.0)
    energy = LogisticEnergy(data)
    x_star, sigma = build_preconditioner(energy)
    fails = []
    for label, ref in (("preconditioned", ReferenceMeasure(x_star, sigma)),
                       ("identity", ReferenceMeasure(x_star, np.ones(3)))):
        model = EnergyTarget(energy, ref)
        cache = ControlVariateCache(model, ref)
        worst = 0.0
        for _ in range(n_points):
            xi = rng.standard_normal(3)
            g = model.grad_U(x_star + xi)
            cv = np.mean([cv_estimator(xi, i, cache, model) for i in range(data.n)], axis=0)
            nv = np.mean([naive_estimator(xi, i, model, ref) for i in range(data.n)], axis=0)
            s = 1.0 + np.max(np.abs(g))
            worst = max(worst, np.max(np.abs(cv - g)) / s, np.max(np.abs(nv - g)) / s)
        if worst > 1e-9:
            fails.append(f"estimator mean error {worst:.2e} ({label} reference)")
    return fails


def check_bounds(rng, bound_scale=1.0, **_):
    """Short strict-bound runs of every sampler and bound strategy."""
    seed = int(rng.integers(2 ** 31))
    ref1 = ReferenceMeasure(np.zeros(1), np.ones(1))
    gauss = gaussian_target(np.zeros(1), np.array([0.5]), ref1)
    data, _ = generate_logistic_data(200, 2, rng, prior_variance=1.0)
    energy = LogisticEnergy(data)
    x_star, sigma = build_preconditioner(energy)
    lref = ReferenceMeasure(x_star, sigma)
    logistic = EnergyTarget(energy, lref)
    bridge = BridgeModel(FaberSchauderBasis(10.0, 3, -math.pi, math.pi), 1.0)
    dgauss = gaussian_target(np.ones(3), np.array([0.5, 1.0, 2.0]))

    def cfg(horizon, strategy="affine", subsample=False):
        return SamplerConfig(time_horizon=horizon, rng_seed=seed, bound_strategy=strategy,
                             subsample=subsample, bound_scale=bound_scale)

    runs = [
        ("gaussian constant", lambda: run_boomerang(gauss, config=cfg(2000, "constant"))),
        ("gaussian affine", lambda: run_boomerang(gauss, config=cfg(2000))),
        ("logistic affine", lambda: run_boomerang(logistic, config=cfg(500))),
        ("logistic subsampled", lambda: run_subsampled_boomerang(
            logistic, cache=ControlVariateCache(logistic, lref), config=cfg(500, "constant"))),
        ("factorised affine", lambda: run_factorised_boomerang(dgauss, config=cfg(500))),
        ("bridge subsampled", lambda: run_factorised_boomerang(
            bridge, config=cfg(200, "constant", True))),
    ]
    fails = []
    for label, run in runs:
        try:
            run()
        except BoundViolationError as exc:
            fails.append(f"{label}: bound violation: {exc}")
    return fails


def check_generator(rng, n=100_000, **_):
    """``E_mu[L psi] = 0`` within 4 standard errors on a Gaussian target."""
    ref = ReferenceMeasure(np.zeros(2), np.ones(2))
    cov = np.array([0.5, 2.0])
    model = gaussian_target(np.array([0.3, -0.2]), cov, ref)
    X = model.energy.sample(rng, n)
    V = rng.standard_normal((n, 2))
    fails = []
    for psi in standard_test_functions(2):
        for kind in ("boomerang", "factorised"):
            est, se = generator_residual(model, ref, 0.1, psi, (X, V), kind)
            if abs(est) > 4 * se + 1e-12:
                fails.append(f"{kind} generator residual for {psi.name}: {est:.3g} (SE {se:.2g})")
    return fails


CHECKS = {
    "reflection": check_reflection,
    "flow": check_flow,
    "estimators": check_estimators,
    "bounds": check_bounds,
    "generator": check_generator,
}


def run_checks(names=None, seed=0, bound_scale=1.0, report=print):
    """Run the selected checks; returns the total number of failures."""
    names = list(CHECKS) if not names else names
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise KeyError(f"unknown check(s) {unknown}; available: {list(CHECKS)}")
    n_fail = 0
    for name in names:
        rng = np.random.default_rng([seed, list(CHECKS).index(name)])
        t0 = time.perf_counter()
        fails = CHECKS[name](rng, bound_scale=bound_scale)
        dt = time.perf_counter() - t0
        status = "PASS" if not fails else "FAIL"
        report(f"{status} {name} ({dt:.1f}s)")
        for f in fails:
            report(f"    {f}")
        n_fail += len(fails)
    return n_fail
