import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from boomerang.core import (ContractError, EnergyTarget, PhaseState, ReferenceMeasure,
                            finite_difference_gradient, sample_velocity, u_from_e)
from boomerang.models import GaussianEnergy, LogisticEnergy, generate_logistic_data, gaussian_target


def random_spd(rng, d):
    A = rng.standard_normal((d, d))
    return A @ A.T + 0.5 * np.eye(d)


class TestPhaseState:
    def test_dimension_mismatch(self):
        with pytest.raises(ContractError):
            PhaseState(np.zeros(2), np.zeros(3))

    def test_nonfinite_rejected(self):
        with pytest.raises(ContractError):
            PhaseState(np.array([np.nan]), np.zeros(1))


class TestReferenceMeasure:
    def test_factor_and_inverse(self):
        rng = np.random.default_rng(1)
        S = random_spd(rng, 4)
        ref = ReferenceMeasure(np.zeros(4), S)
        L = ref.sigma_factor
        np.testing.assert_allclose(L @ L.T, S, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(S @ ref.sigma_inv, np.eye(4), atol=1e-8)
        assert not ref.is_diagonal

    def test_diagonal_fast_path(self):
        ref = ReferenceMeasure(np.ones(3), np.array([1.0, 4.0, 9.0]))
        assert ref.is_diagonal
        np.testing.assert_allclose(ref.sigma_inv_dot(np.ones(3)), [1, 0.25, 1 / 9])
        np.testing.assert_allclose(ref.colour(np.ones(3)), [1, 2, 3])

    def test_diagonal_matrix_detected(self):
        ref = ReferenceMeasure(np.zeros(2), np.diag([2.0, 3.0]))
        assert ref.is_diagonal

    @pytest.mark.parametrize("sigma", [np.array([[1.0, 2.0], [2.0, 1.0]]),
                                       np.array([[1.0, 0.5], [0.0, 1.0]]),
                                       np.array([1.0, -1.0])])
    def test_invalid_sigma(self, sigma):
        with pytest.raises(ContractError):
            ReferenceMeasure(np.zeros(2), sigma)

    def test_whiten_inverts_colour(self):
        rng = np.random.default_rng(2)
        ref = ReferenceMeasure(np.zeros(3), random_spd(rng, 3))
        z = rng.standard_normal(3)
        np.testing.assert_allclose(ref.whiten(ref.colour(z)), z, atol=1e-12)


class TestUFromE:
    def test_zero_at_centre(self):
        ref = ReferenceMeasure(np.array([1.0, -2.0]), np.ones(2))
        assert u_from_e(0.0, ref.x_star, ref) == 0.0

    def test_target_equals_reference(self):
        ref = ReferenceMeasure.standard(1)
        for x in np.linspace(-3, 3, 7):
            assert u_from_e(0.5 * x * x, np.array([x]), ref) == pytest.approx(0.0, abs=1e-15)

    def test_hand_value(self):
        ref = ReferenceMeasure.standard(2)
        assert u_from_e(5.0, np.array([1.0, 1.0]), ref) == pytest.approx(4.0)

    def test_dimension_mismatch(self):
        with pytest.raises(ContractError):
            u_from_e(1.0, np.zeros(3), ReferenceMeasure.standard(2))


class TestSampleVelocity:
    def test_identity_mean(self):
        rng = np.random.default_rng(3)
        ref = ReferenceMeasure.standard(3)
        V = np.array([sample_velocity(ref, rng) for _ in range(100_000)])
        assert np.all(np.abs(V.mean(axis=0)) < 0.02)

    def test_variance_four(self):
        rng = np.random.default_rng(4)
        ref = ReferenceMeasure(np.zeros(1), np.array([4.0]))
        V = np.array([sample_velocity(ref, rng) for _ in range(100_000)])
        assert 3.8 <= V.var() <= 4.2

    def test_full_covariance(self):
        rng = np.random.default_rng(5)
        S = np.array([[2.0, 0.6], [0.6, 1.0]])
        ref = ReferenceMeasure(np.zeros(2), S)
        V = ref.colour(rng.standard_normal((100_000, 2)).T).T
        np.testing.assert_allclose(np.cov(V.T), S, rtol=0.05)

    def test_zero_draw(self):
        class Zeros:
            def standard_normal(self, d):
                return np.zeros(d)

        ref = ReferenceMeasure(np.zeros(2), np.array([[2.0, 1.0], [1.0, 2.0]]))
        np.testing.assert_array_equal(sample_velocity(ref, Zeros()), np.zeros(2))


class TestEnergyTarget:
    def test_gaussian_equal_to_reference_has_zero_gradient(self):
        ref = ReferenceMeasure(np.array([0.5, -1.0]), np.array([2.0, 0.5]))
        model = gaussian_target(ref.x_star, ref.diagonal, ref)
        np.testing.assert_allclose(model.grad_U(ref.x_star), 0.0, atol=1e-12)
        np.testing.assert_allclose(model.grad_U(ref.x_star + 1.0), 0.0, atol=1e-12)

    def test_grad_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        data, _ = generate_logistic_data(30, 3, rng, prior_variance=2.0)
        ref = ReferenceMeasure(rng.standard_normal(3), random_spd(rng, 3))
        model = EnergyTarget(LogisticEnergy(data), ref)
        for _ in range(20):
            x = rng.standard_normal(3)
            fd = finite_difference_gradient(model.U, x)
            np.testing.assert_allclose(model.grad_U(x), fd, rtol=1e-5, atol=1e-6)

    def test_partial_matches_gradient(self):
        rng = np.random.default_rng(7)
        data, _ = generate_logistic_data(20, 3, rng, prior_variance=1.0)
        for ref in (ReferenceMeasure(np.ones(3), np.array([1.0, 2.0, 3.0])),
                    ReferenceMeasure(np.ones(3), random_spd(rng, 3))):
            model = EnergyTarget(LogisticEnergy(data), ref)
            x = rng.standard_normal(3)
            g = model.grad_U(x)
            np.testing.assert_allclose([model.partial_U(i, x) for i in range(3)], g, rtol=1e-12)

    def test_term_average_is_full_gradient(self):
        rng = np.random.default_rng(8)
        data, _ = generate_logistic_data(40, 2, rng, prior_variance=3.0)
        model = EnergyTarget(LogisticEnergy(data), ReferenceMeasure.standard(2))
        x = rng.standard_normal(2)
        avg = np.mean([model.term_grad_E(i, x) for i in range(40)], axis=0)
        np.testing.assert_allclose(avg, model.grad_E(x), rtol=1e-10, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ContractError):
            EnergyTarget(GaussianEnergy(np.zeros(2), np.ones(2)), ReferenceMeasure.standard(3))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2 ** 31 - 1))
def test_sigma_inverse_property(d, seed):
    rng = np.random.default_rng(seed)
    S = random_spd(rng, d)
    ref = ReferenceMeasure(np.zeros(d), S)
    np.testing.assert_allclose(S @ ref.sigma_inv, np.eye(d), atol=1e-8 * np.linalg.cond(S))
    v = rng.standard_normal(d)
    assert ref.sigma_inv_norm_sq(v) == pytest.approx(float(v @ np.linalg.solve(S, v)), rel=1e-8)
