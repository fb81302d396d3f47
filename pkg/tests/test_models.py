import math

import numpy as np
import pytest

from boomerang.core import ContractError, EnergyTarget, ReferenceMeasure
from boomerang.models import (BridgeModel, FaberSchauderBasis, LogisticData, LogisticEnergy,
                              SeparableQuartic, bridge_bound_constants, bridge_partial_U,
                              bridge_subsampled_partial, faber_schauder_eval, gaussian_target,
                              generate_logistic_data, load_logistic_csv, logistic_bound_constants,
                              logistic_energy, logistic_grad_E, logistic_hess_E, save_logistic_csv)


def fd_grad(f, x, h=1e-6):
    out = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        out[k] = (f(x + e) - f(x - e)) / (2 * h)
    return out


class TestLogistic:
    def test_grad_at_origin(self):
        rng = np.random.default_rng(0)
        Y = rng.standard_normal((7, 3))
        z = rng.integers(0, 2, 7)
        data = LogisticData(Y, z)
        np.testing.assert_allclose(logistic_grad_E(np.zeros(3), data), Y.T @ (0.5 - z), atol=1e-15)

    def test_grad_hand_value(self):
        data = LogisticData(np.array([[1.0]]), np.array([1]))
        np.testing.assert_allclose(logistic_grad_E(np.zeros(1), data), [-0.5])

    def test_no_overflow(self):
        data = LogisticData(np.array([[1.0], [-1.0]]), np.array([1, 0]))
        for x in (700.0, -700.0):
            g = logistic_grad_E(np.array([x]), data)
            h = logistic_hess_E(np.array([x]), data)
            assert np.all(np.isfinite(g)) and np.all(np.isfinite(h))
            assert math.isfinite(logistic_energy(np.array([x]), data))

    def test_finite_differences(self):
        rng = np.random.default_rng(1)
        data, _ = generate_logistic_data(30, 4, rng, prior_variance=2.0)
        for _ in range(20):
            x = rng.standard_normal(4)
            g = logistic_grad_E(x, data)
            np.testing.assert_allclose(fd_grad(lambda y: logistic_energy(y, data), x), g,
                                       rtol=1e-5, atol=1e-5)
            H = logistic_hess_E(x, data)
            H_fd = np.array([fd_grad(lambda y: logistic_grad_E(y, data)[k], x) for k in range(4)])
            np.testing.assert_allclose(H_fd, H, rtol=1e-4, atol=1e-4)

    def test_hessian_at_origin(self):
        rng = np.random.default_rng(2)
        data, _ = generate_logistic_data(20, 3, rng, prior_variance=4.0)
        Y = data.predictors
        np.testing.assert_allclose(logistic_hess_E(np.zeros(3), data),
                                   np.eye(3) / 4.0 + 0.25 * Y.T @ Y, atol=1e-12)

    def test_hessian_saturates(self):
        data = LogisticData(np.array([[1.0]]), np.array([1]))
        assert logistic_hess_E(np.array([60.0]), data)[0, 0] < 1e-20

    def test_dimension_mismatch(self):
        data = LogisticData(np.ones((2, 2)), np.array([0, 1]))
        with pytest.raises(ContractError):
            logistic_grad_E(np.zeros(3), data)

    def test_data_validation(self):
        with pytest.raises(ContractError):
            LogisticData(np.ones((2, 2)), np.array([0, 2]))
        with pytest.raises(ContractError):
            LogisticData(np.ones((2, 2)), np.array([0, 1, 1]))
        with pytest.raises(ContractError):
            LogisticData(np.ones((2, 2)), np.array([0, 1]), prior_variance=0.0)

    def test_bound_constants(self):
        M, c = logistic_bound_constants(LogisticData(np.array([[1.0, 0.0]]), np.array([1])))
        assert M == pytest.approx(0.25, rel=1e-8)
        assert c == pytest.approx(0.25)
        assert logistic_bound_constants(LogisticData(np.zeros((5, 3)), np.zeros(5))) == (0.0, 0.0)

    def test_M_against_eigvalsh_and_trace(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            Y = rng.standard_normal((int(rng.integers(1, 40)), int(rng.integers(1, 6))))
            data = LogisticData(Y, np.zeros(Y.shape[0]))
            M, c = logistic_bound_constants(data)
            assert M == pytest.approx(0.25 * np.linalg.eigvalsh(Y.T @ Y)[-1], rel=1e-6)
            assert M <= 0.25 * np.sum(Y * Y) * (1 + 1e-12)
            assert c == pytest.approx(0.25 * Y.shape[0] * np.max(np.sum(Y * Y, axis=1)))

    def test_sum_structure(self):
        rng = np.random.default_rng(4)
        data, _ = generate_logistic_data(25, 3, rng, prior_variance=1.0)
        energy = LogisticEnergy(data)
        x = rng.standard_normal(3)
        grads = np.array([energy.term_grad(i, x) for i in range(25)])
        np.testing.assert_allclose(grads.mean(axis=0), energy.grad(x), atol=1e-12)
        np.testing.assert_allclose(energy.term_grads(x), grads, atol=1e-12)
        hs = np.mean([energy.term_hess(i, x) for i in range(25)], axis=0)
        np.testing.assert_allclose(hs, energy.hess(x), atol=1e-12)
        w = rng.standard_normal(3)
        np.testing.assert_allclose(energy.term_hvp(5, x, w), energy.term_hess(5, x) @ w,
                                   atol=1e-12)

    def test_generator_reproducible(self):
        a, xa = generate_logistic_data(40, 3, np.random.default_rng(9))
        b, xb = generate_logistic_data(40, 3, np.random.default_rng(9))
        np.testing.assert_array_equal(a.predictors, b.predictors)
        np.testing.assert_array_equal(a.outcomes, b.outcomes)
        np.testing.assert_array_equal(xa, xb)
        c, _ = generate_logistic_data(40, 3, np.random.default_rng(10))
        assert not np.array_equal(a.predictors, c.predictors)

    def test_scaled_predictors(self):
        rng = np.random.default_rng(5)
        data, _ = generate_logistic_data(20_000, 4, rng, scale_predictors=True)
        assert np.var(data.predictors) == pytest.approx(0.25, rel=0.05)

    def test_csv_roundtrip(self, tmp_path):
        rng = np.random.default_rng(6)
        data, _ = generate_logistic_data(15, 3, rng)
        path = tmp_path / "data.csv"
        save_logistic_csv(path, data)
        back = load_logistic_csv(path, prior_variance=2.0)
        np.testing.assert_array_equal(back.predictors, data.predictors)
        np.testing.assert_array_equal(back.outcomes, data.outcomes)
        assert back.prior_variance == 2.0

    def test_csv_requires_outcome_column(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,0\n")
        with pytest.raises(ContractError):
            load_logistic_csv(path)


class TestFaberSchauder:
    def test_dimension_and_supports(self):
        basis = FaberSchauderBasis(3.0, 4)
        assert basis.dimension == 31
        for i in range(5):
            for j in range(2 ** i):
                a, b = basis.support(i, j)
                assert b - a == pytest.approx(3.0 * 2.0 ** -i)

    def test_endpoints(self):
        rng = np.random.default_rng(0)
        basis = FaberSchauderBasis(2.0, 3, u=-1.0, v=0.7)
        c = rng.standard_normal(basis.dimension)
        assert faber_schauder_eval(basis, c, 0.0) == pytest.approx(-1.0)
        assert faber_schauder_eval(basis, c, 2.0) == pytest.approx(0.7)

    def test_zero_coefficients(self):
        basis = FaberSchauderBasis(2.0, 3, u=1.0, v=3.0)
        for t in np.linspace(0, 2, 9):
            assert faber_schauder_eval(basis, np.zeros(15), t) == pytest.approx(1.0 + t)

    def test_peak(self):
        basis = FaberSchauderBasis(1.0, 2, u=0.4, v=-1.0)
        c = np.zeros(7)
        c[0] = 1.0
        assert faber_schauder_eval(basis, c, 0.5) == pytest.approx(0.2 - 0.5 + 0.5)

    def test_vectorised_matches_scalar(self):
        rng = np.random.default_rng(1)
        basis = FaberSchauderBasis(5.0, 4, u=0.3, v=2.0)
        c = rng.standard_normal(basis.dimension)
        t = rng.uniform(0, 5, 50)
        np.testing.assert_allclose(basis.evaluate(c, t),
                                   [faber_schauder_eval(basis, c, s) for s in t], atol=1e-12)

    def test_at_most_n_plus_one_nonzero(self):
        basis = FaberSchauderBasis(1.0, 5)
        for t in np.random.default_rng(2).uniform(0, 1, 100):
            vals = [basis.phi(int(basis.level[k]), int(basis.position[k]), t)
                    for k in range(basis.dimension)]
            assert np.count_nonzero(vals) <= 6

    def test_time_out_of_range(self):
        basis = FaberSchauderBasis(1.0, 2)
        with pytest.raises(ContractError):
            faber_schauder_eval(basis, np.zeros(7), 1.5)

    def test_bad_arguments(self):
        with pytest.raises(ContractError):
            FaberSchauderBasis(0.0, 2)
        with pytest.raises(ContractError):
            FaberSchauderBasis(1.0, -1)


class TestBridge:
    def test_zero_alpha(self):
        rng = np.random.default_rng(0)
        basis = FaberSchauderBasis(2.0, 3, 0.5, -0.5)
        c = rng.standard_normal(15)
        for k in range(15):
            i, j = int(basis.level[k]), int(basis.position[k])
            assert bridge_partial_U(i, j, c, basis, 0.0) == 0.0
            assert bridge_subsampled_partial(i, j, c, basis, 0.0, rng) == 0.0
        np.testing.assert_array_equal(bridge_bound_constants(basis, 0.0), 0.0)

    def test_zero_path(self):
        basis = FaberSchauderBasis(2.0, 3)
        for k in range(15):
            assert bridge_partial_U(int(basis.level[k]), int(basis.position[k]), np.zeros(15),
                                    basis, 0.7) == 0.0

    def test_quadrature_order_check(self):
        with pytest.raises(ContractError):
            bridge_partial_U(0, 0, np.zeros(3), FaberSchauderBasis(1.0, 1), 1.0, quadrature=8)

    @pytest.mark.parametrize("k", [0, 2, 9])
    def test_subsampled_mean_matches_quadrature(self, k):
        rng = np.random.default_rng(10 + k)
        basis = FaberSchauderBasis(4.0, 3, 0.2, -0.4)
        c = rng.standard_normal(15)
        i, j = int(basis.level[k]), int(basis.position[k])
        exact = bridge_partial_U(i, j, c, basis, 0.5)
        rng = np.random.default_rng([k, 1])
        draws = np.array([bridge_subsampled_partial(i, j, c, basis, 0.5, rng)
                          for _ in range(200_000)])
        se = draws.std() / math.sqrt(draws.size)
        assert abs(draws.mean() - exact) <= 3 * se
        m = bridge_bound_constants(basis, 0.5)[k]
        assert np.abs(draws).max() <= m

    def test_bound_constants(self):
        m = bridge_bound_constants(FaberSchauderBasis(1.0, 4), 1.0)
        assert m[0] == pytest.approx(0.5)
        lev = FaberSchauderBasis(1.0, 4).level
        for i in range(4):
            np.testing.assert_allclose(m[lev == i] / m[lev == i + 1][0], 2 ** 1.5)

    def test_local_estimator_matches_global(self):
        basis = FaberSchauderBasis(3.0, 3, 0.1, 0.9)
        model = BridgeModel(basis, 0.8)
        c = np.random.default_rng(3).standard_normal(15)
        for k in range(15):
            i, j = int(basis.level[k]), int(basis.position[k])
            a = bridge_subsampled_partial(i, j, c, basis, 0.8, np.random.default_rng(k))
            b = model.local_subsampled_partial(k, lambda q: c[q], np.random.default_rng(k))
            assert a == pytest.approx(b, rel=1e-12, abs=1e-14)

    def test_grad_matches_partials(self):
        basis = FaberSchauderBasis(3.0, 3, 0.1, 0.9)
        model = BridgeModel(basis, 0.8)
        c = np.random.default_rng(4).standard_normal(15)
        np.testing.assert_allclose(model.grad_U(c), [model.partial_U(k, c) for k in range(15)],
                                   atol=1e-10)

    def test_sparsity(self):
        basis = FaberSchauderBasis(2.0, 3, 0.3, 0.1)
        model = BridgeModel(basis, 1.0)
        rng = np.random.default_rng(5)
        c = rng.standard_normal(15)
        for k in range(15):
            ak, bk = basis.support(int(basis.level[k]), int(basis.position[k]))
            base = model.partial_U(k, c)
            for q in range(15):
                aq, bq = basis.support(int(basis.level[q]), int(basis.position[q]))
                if bq <= ak or aq >= bk:
                    c2 = c.copy()
                    c2[q] += 3.0
                    assert model.partial_U(k, c2) == base


def models_for_fd():
    rng = np.random.default_rng(7)
    data, _ = generate_logistic_data(30, 3, rng, prior_variance=1.0)
    yield "logistic", EnergyTarget(LogisticEnergy(data), ReferenceMeasure(np.ones(3), 2.0 * np.eye(3))), 3
    yield "gaussian", gaussian_target(np.array([0.5, -1.0]), np.array([[1.0, 0.3], [0.3, 2.0]])), 2
    yield "quartic", EnergyTarget(SeparableQuartic([1.0, 2.0], [0.5, 0.1]),
                                  ReferenceMeasure(np.zeros(2), np.array([0.5, 1.5]))), 2
    yield "bridge", BridgeModel(FaberSchauderBasis(2.0, 2, 0.2, -0.3), 0.7), 7


@pytest.mark.parametrize("name,model,d", list(models_for_fd()), ids=lambda p: p if isinstance(p, str) else "")
def test_grad_U_matches_finite_differences(name, model, d):
    rng = np.random.default_rng(8)
    for _ in range(20):
        x = rng.standard_normal(d)
        np.testing.assert_allclose(fd_grad(model.U, x), model.grad_U(x), rtol=1e-5, atol=1e-6)


def test_quartic_sampler_moments():
    q = SeparableQuartic([1.0], [1.0])
    s = q.sample(np.random.default_rng(0), 200_000)[:, 0]
    grid = np.linspace(-6, 6, 20001)
    w = q.density_1d(0)(grid)
    m2 = np.sum(grid ** 2 * w) / np.sum(w)
    assert np.mean(s ** 2) == pytest.approx(m2, rel=0.01)
