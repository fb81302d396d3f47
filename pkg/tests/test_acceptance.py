"""End-to-end acceptance suite.

Each test records one line in ``REPORT``; ``conftest.py`` prints the lines
after the run so the pass/fail status of every item is visible in one place.
Runtimes are measured per item and checked against its budget.
"""

import math
import time
import warnings

import numpy as np
import pytest
from scipy import stats

from boomerang.cli.experiments import bridge_path_checks, bridge_path_table
from boomerang.core import EnergyTarget, PhaseState, ReferenceMeasure
from boomerang.diagnostics import (batch_means_se, discretize, ess_per_second, event_stats,
                                   generator_residual, ks_pvalues, standard_test_functions,
                                   thin_chain)
from boomerang.dynamics import TWO_PI, flow_centred
from boomerang.events import BoundViolationWarning, contour_reflect
from boomerang.models import (BridgeModel, FaberSchauderBasis, LogisticEnergy, SeparableQuartic,
                              ZeroPotential, gaussian_target, generate_logistic_data)
from boomerang.samplers import (SamplerConfig, rescale_velocity_for_comparison, run_boomerang,
                                run_bps, run_factorised_boomerang, run_mala,
                                run_subsampled_boomerang, run_zigzag)
from boomerang.subsampling import (ControlVariateCache, build_preconditioner, cv_estimator,
                                   naive_estimator, naive_hessian_spread, naive_subsampling_bound,
                                   subsampling_bound)
from tests.helpers import random_spd

REPORT = {}


class Item:
    """Times one acceptance item and records its outcome, pass or fail."""

    def __init__(self, number, title, budget_s):
        self.number, self.title, self.budget = number, title, budget_s
        self.detail = ""

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.t0
        ok = exc_type is None and elapsed < self.budget
        why = self.detail
        if exc_type is not None and exc_type is not AssertionError:
            why = f"{exc_type.__name__}: {exc}"
        elif elapsed >= self.budget:
            why += f" over budget {self.budget:g}s"
        REPORT[self.number] = (f"[{self.number:2d}] {'PASS' if ok else 'FAIL'} {self.title} "
                               f"({elapsed:.1f}s) {why}").rstrip()
        if exc_type is None:
            assert elapsed < self.budget, f"took {elapsed:.1f}s, budget {self.budget}s"
        return False


def logistic_problem(n, d, seed):
    data, _ = generate_logistic_data(n, d, np.random.default_rng(seed), prior_variance=1.0)
    energy = LogisticEnergy(data)
    x_star, sigma = build_preconditioner(energy)
    return EnergyTarget(energy, ReferenceMeasure(x_star, sigma))


def test_reflection_identities():
    with Item(1, "reflection identities", 5) as it:
        rng = np.random.default_rng(101)
        worst = 0.0
        for _ in range(1000):
            d = int(rng.integers(1, 6))
            ref = ReferenceMeasure(rng.standard_normal(d), random_spd(rng, d))
            x, v, g = rng.standard_normal((3, d))
            w = contour_reflect(x, v, g, ref)
            scale = 1.0 + abs(float(v @ g)) + ref.sigma_inv_norm_sq(v)
            worst = max(worst,
                        abs(float(w @ g) + float(v @ g)) / scale,
                        abs(ref.sigma_inv_norm_sq(w) - ref.sigma_inv_norm_sq(v)) / scale,
                        float(np.max(np.abs(contour_reflect(x, w, g, ref) - v))) / math.sqrt(scale))
        it.detail = f"max relative error {worst:.1e}"
        assert worst <= 1e-10


def test_flow_exactness():
    with Item(2, "flow exactness", 5) as it:
        rng = np.random.default_rng(102)
        worst = 0.0
        for _ in range(1000):
            d = int(rng.integers(1, 6))
            xi, v = rng.standard_normal((2, d))
            A = random_spd(rng, d)
            s, t = rng.uniform(0, 10, size=2)
            x1, v1 = flow_centred(xi, v, s)
            q0 = xi @ A @ xi + v @ A @ v
            q1 = x1 @ A @ x1 + v1 @ A @ v1
            xp, vp = flow_centred(xi, v, TWO_PI)
            xa, va = flow_centred(*flow_centred(xi, v, s), t)
            xb, vb = flow_centred(xi, v, s + t)
            worst = max(worst, abs(q1 - q0) / (1 + q0),
                        float(np.max(np.abs(np.r_[xp - xi, vp - v]))),
                        float(np.max(np.abs(np.r_[xa - xb, va - vb]))))
        it.detail = f"max error {worst:.1e}"
        assert worst <= 1e-10


def test_exact_gaussian_case():
    with Item(3, "exact Gaussian case", 60) as it:
        log = run_boomerang(ZeroPotential(ReferenceMeasure.standard(5)),
                            config=SamplerConfig(time_horizon=10_000, refresh_rate=0.1,
                                                 rng_seed=103))
        n_refl = log.stats["n_reflections"]
        # lag-40 correlation is cos(40) exp(-4), about 0.01
        samples = thin_chain(discretize(log, 0.5), 40.0)
        p = ks_pvalues(samples, stats.norm.cdf)
        it.detail = f"reflections {n_refl}, min KS p {p.min():.3f}"
        assert n_refl == 0
        assert np.all(p > 0.01)


def test_generator_stationarity():
    with Item(4, "generator stationarity", 120) as it:
        rng = np.random.default_rng(104)
        n = 100_000
        ref_g = ReferenceMeasure(np.array([0.2, 0.0]), np.array([1.0, 1.5]))
        gauss = gaussian_target(np.array([0.5, -0.3]), np.array([0.5, 2.0]), ref_g)
        Xg = gauss.energy.sample(rng, n)
        Vg = rng.standard_normal((n, 2)) * np.sqrt(ref_g.diagonal)
        quartic = SeparableQuartic([1.0], [1.0])
        ref_q = ReferenceMeasure.standard(1)
        Xq = quartic.sample(rng, n)
        Vq = rng.standard_normal((n, 1))
        cases = [(gauss, ref_g, (Xg, Vg), 2), (EnergyTarget(quartic, ref_q), ref_q, (Xq, Vq), 1)]
        worst = 0.0
        for model, ref, sample, d in cases:
            for psi in standard_test_functions(d):
                for kind in ("boomerang", "factorised"):
                    est, se = generator_residual(model, ref, 0.1, psi, sample, kind)
                    worst = max(worst, abs(est) / se)
        it.detail = f"max |residual| / SE {worst:.2f} over 24 cases"
        assert worst <= 4.0


def test_subsampling_is_exact():
    with Item(5, "exact subsampling", 180) as it:
        target = logistic_problem(100, 2, 105)
        ref = target.ref
        sd = np.sqrt(np.diag(ref.sigma))
        axes = [ref.x_star[i] + np.linspace(-8, 8, 401) * sd[i] for i in range(2)]
        g0, g1 = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([g0.ravel(), g1.ravel()], axis=1)
        logp = -np.array([target.energy.energy(p) for p in pts])
        w = np.exp(logp - logp.max())
        w /= w.sum()
        mean = w @ pts
        var = w @ (pts - mean) ** 2
        log = run_subsampled_boomerang(target, config=SamplerConfig(
            time_horizon=10_000, rng_seed=105, bound_strategy="constant"))
        X = discretize(log, 0.1).samples
        z = []
        for k in range(2):
            z.append(abs(X[:, k].mean() - mean[k]) / batch_means_se(X[:, k]))
            dev = (X[:, k] - X[:, k].mean()) ** 2
            z.append(abs(dev.mean() - var[k]) / batch_means_se(dev))
        it.detail = f"max |error| / SE {max(z):.2f} (means and variances)"
        assert max(z) <= 3.0


def test_estimator_unbiasedness():
    with Item(6, "estimator unbiasedness", 10) as it:
        rng = np.random.default_rng(106)
        data, _ = generate_logistic_data(50, 3, rng, prior_variance=1.0)
        energy = LogisticEnergy(data)
        x_star, sigma = build_preconditioner(energy)
        worst = 0.0
        for ref in (ReferenceMeasure(x_star, sigma), ReferenceMeasure(x_star, np.ones(3))):
            model = EnergyTarget(energy, ref)
            cache = ControlVariateCache(model, ref)
            for _ in range(100):
                xi = rng.standard_normal(3)
                g = model.grad_U(x_star + xi)
                cv = np.mean([cv_estimator(xi, i, cache, model) for i in range(50)], axis=0)
                nv = np.mean([naive_estimator(xi, i, model, ref) for i in range(50)], axis=0)
                s = 1.0 + np.max(np.abs(g))
                worst = max(worst, np.max(np.abs(cv - g)) / s, np.max(np.abs(nv - g)) / s)
        it.detail = f"max relative error {worst:.1e}"
        assert worst <= 1e-9


def test_bound_domination():
    with Item(7, "bound domination", 300) as it:
        target = logistic_problem(1000, 2, 107)
        bridge = BridgeModel(FaberSchauderBasis(50.0, 10, -math.pi, 3 * math.pi), 0.5)

        def cfg(horizon, strategy, subsample=False, refresh=0.1):
            return SamplerConfig(time_horizon=horizon, refresh_rate=refresh, rng_seed=107,
                                 bound_strategy=strategy, subsample=subsample,
                                 strict_bounds=False)

        runs = [
            lambda: run_boomerang(target, config=cfg(10_000, "affine")),
            lambda: run_boomerang(target, config=cfg(10_000, "constant")),
            lambda: run_subsampled_boomerang(target, config=cfg(20_000, "constant")),
            lambda: run_factorised_boomerang(bridge, config=cfg(2000, "constant", True, 0.01)),
        ]
        proposals = violations = 0
        with warnings.catch_warnings():
            warnings.simplefilter("error", BoundViolationWarning)
            for run in runs:
                log = run()
                proposals += log.stats["n_proposals"]
                violations += log.stats["n_violations"]
        it.detail = f"{violations} violations in {proposals} proposals"
        assert proposals >= 1_000_000
        assert violations == 0


def _bound_medians(n, seed, n_states=1000):
    target = logistic_problem(n, 2, seed)
    ref = target.ref
    cache = ControlVariateCache(target, ref)
    Q = target.bound_constants().Q
    Qn = naive_hessian_spread(target, ref)
    rng = np.random.default_rng(seed + 1000)
    cv, naive = [], []
    for _ in range(n_states):
        # states typical for the reference, which the posterior is close to
        s = PhaseState(ref.colour(rng.standard_normal(2)), ref.colour(rng.standard_normal(2)))
        cv.append(subsampling_bound(s, Q, cache.grad_at_ref_norm, cache.correction_norm).a)
        naive.append(naive_subsampling_bound(s, Qn, cache.max_term_grad_norm).a)
    return np.median(cv), np.median(naive)


def test_subsampling_bound_growth():
    with Item(8, "subsampling bound growth in n", 300) as it:
        seeds = range(120, 130)
        small = np.array([_bound_medians(100, s) for s in seeds])
        large = np.array([_bound_medians(10_000, s) for s in seeds])
        cv_ratio, naive_ratio = large.mean(axis=0) / small.mean(axis=0)
        it.detail = (f"control-variate bound x{cv_ratio:.2f} (need < 3), "
                     f"naive bound x{naive_ratio:.1f} (need > 20)")
        assert cv_ratio < 3
        assert naive_ratio > 20


def _ess_per_sec(n, seed, subsample):
    target = logistic_problem(n, 2, seed)
    cfg = SamplerConfig(time_horizon=10_000, rng_seed=seed,
                        bound_strategy="constant" if subsample else "affine")
    if subsample:
        log = run_subsampled_boomerang(target, cache=ControlVariateCache(target, target.ref),
                                       config=cfg)
    else:
        log = run_boomerang(target, config=cfg)
    return ess_per_second(discretize(log))


def test_ess_per_second_trend():
    with Item(9, "ESS/sec trend in n", 900) as it:
        seeds = range(111, 116)
        sub = np.median([_ess_per_sec(10_000, s, True) / _ess_per_sec(1000, s, True)
                         for s in seeds])
        full = np.median([_ess_per_sec(10_000, s, False) / _ess_per_sec(1000, s, False)
                          for s in seeds])
        it.detail = f"median ratio subsampled {sub:.2f} (need > 0.3), full {full:.2f} (need < 0.3)"
        assert sub > 0.3
        assert full < 0.3


def test_bridge_reflections_by_level():
    with Item(10, "bridge reflections by level", 600) as it:
        basis = FaberSchauderBasis(50.0, 10, -math.pi, 3 * math.pi)
        cfg = SamplerConfig(time_horizon=2000, refresh_rate=0.01, rng_seed=117,
                            bound_strategy="constant", subsample=True)
        per = {}
        for alpha in (0.5, 0.0):
            model = BridgeModel(basis, alpha)
            per[("fbs", alpha)] = event_stats(run_factorised_boomerang(model, config=cfg),
                                              basis.level)["reflections_per_level"]
        model = BridgeModel(basis, 0.5)
        zz = run_zigzag(model, cfg, speed=rescale_velocity_for_comparison("zigzag", model.ref))
        per["zz"] = event_stats(zz, basis.level)["reflections_per_level"]
        fbs = per[("fbs", 0.5)]
        it.detail = (f"FBS level 10 {fbs[10] * 2000:.2f} vs ZZ {per['zz'][10] * 2000:.1f} "
                     f"per coefficient; alpha=0 total {per[('fbs', 0.0)].sum():g}")
        assert np.all(np.diff(fbs[2:]) < 0)
        assert fbs[10] < per["zz"][10]
        assert np.all(per[("fbs", 0.0)] == 0)


def test_bridge_paths():
    with Item(11, "bridge paths", 600) as it:
        u, v = -math.pi, 3 * math.pi
        model = BridgeModel(FaberSchauderBasis(50.0, 6, u, v), 1.0)
        log = run_factorised_boomerang(model, config=SamplerConfig(
            time_horizon=20_000, refresh_rate=0.01, rng_seed=118, bound_strategy="constant",
            subsample=True))
        t, paths = bridge_path_table(log, model, 1000)
        ends, band = bridge_path_checks(t, paths, u, v)
        it.detail = f"{paths.shape[0]} paths, exact endpoints {ends:.3f}, attractor visits {band:.3f}"
        assert paths.shape[0] == 1000
        assert ends >= 0.95
        assert band >= 0.5


def test_baselines():
    with Item(12, "baseline samplers", 180) as it:
        target = gaussian_target(np.zeros(3), np.ones(3))
        cfg = SamplerConfig(time_horizon=20_000, refresh_rate=1.0, rng_seed=119)
        p = {
            "bps": ks_pvalues(thin_chain(discretize(run_bps(target, cfg), 0.5), 10.0),
                              stats.norm.cdf),
            "zigzag": ks_pvalues(thin_chain(discretize(run_zigzag(target, cfg), 0.5), 10.0),
                                 stats.norm.cdf),
        }
        res = run_mala(target, 0.5, 100_000, np.random.default_rng(119), warmup=2000)
        p["mala"] = ks_pvalues(res.samples[::20], stats.norm.cdf)
        it.detail = ", ".join(f"{k} min p {v.min():.3f}" for k, v in p.items())
        for v in p.values():
            assert np.all(v > 0.01)
