import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from boomerang.core import ContractError, PhaseState
from boomerang.dynamics import (TWO_PI, elliptical_flow, flow_centred, flow_invariant,
                                linear_flow, rotation)

finite = st.floats(-10, 10, allow_nan=False)


def vec(d):
    return arrays(np.float64, d, elements=finite)


def test_zero_step_is_identity():
    s = PhaseState(np.array([1.0, 2.0]), np.array([-0.5, 3.0]), t=1.5)
    out = elliptical_flow(s, 0.0, np.array([0.3, 0.3]))
    np.testing.assert_array_equal(out.x, s.x)
    np.testing.assert_array_equal(out.v, s.v)
    assert out.t == 1.5


def test_quarter_rotation():
    s = PhaseState(np.array([1.0, 0.0]), np.array([0.0, 2.0]))
    out = elliptical_flow(s, math.pi / 2, np.zeros(2))
    np.testing.assert_allclose(out.x, [0.0, 2.0], atol=1e-15)
    np.testing.assert_allclose(out.v, [-1.0, 0.0], atol=1e-15)
    assert out.t == pytest.approx(math.pi / 2)


def test_full_period():
    rng = np.random.default_rng(0)
    for _ in range(100):
        s = PhaseState(rng.standard_normal(3), rng.standard_normal(3))
        out = elliptical_flow(s, TWO_PI, np.zeros(3))
        np.testing.assert_allclose(out.x, s.x, atol=1e-12)
        np.testing.assert_allclose(out.v, s.v, atol=1e-12)


def test_uncentred_flow_rotates_about_centre():
    x_star = np.array([2.0, -1.0])
    s = PhaseState(x_star + np.array([1.0, 0.0]), np.array([0.0, 1.0]))
    out = elliptical_flow(s, math.pi, x_star)
    np.testing.assert_allclose(out.x, x_star - np.array([1.0, 0.0]), atol=1e-14)


@pytest.mark.parametrize("dt", [-1.0, math.inf, math.nan])
def test_invalid_step(dt):
    with pytest.raises(ContractError):
        elliptical_flow(PhaseState(np.zeros(1), np.ones(1)), dt, np.zeros(1))


def test_long_step_reduction():
    # reduced and unreduced evaluation agree up to the argument's own precision
    c, s = rotation(1e7)
    assert c * c + s * s == pytest.approx(1.0, abs=1e-14)
    assert c == pytest.approx(math.cos(1e7), abs=1e-8)


class TestInvariant:
    def test_origin(self):
        s = PhaseState(np.array([1.0, 1.0]), np.zeros(2))
        assert flow_invariant(s, np.eye(2), np.array([1.0, 1.0])) == 0.0

    def test_hand_value(self):
        s = PhaseState(np.array([3.0, 0.0]), np.array([0.0, 4.0]))
        assert flow_invariant(s, np.eye(2), np.zeros(2)) == pytest.approx(25.0)

    def test_conserved_with_inverse_covariance(self):
        rng = np.random.default_rng(1)
        A = rng.standard_normal((3, 3))
        Q = np.linalg.inv(A @ A.T + np.eye(3))
        x_star = rng.standard_normal(3)
        s = PhaseState(rng.standard_normal(3), rng.standard_normal(3))
        before = flow_invariant(s, Q, x_star)
        after = flow_invariant(elliptical_flow(s, 1.7, x_star), Q, x_star)
        assert after == pytest.approx(before, rel=1e-12)

    def test_diagonal_q(self):
        s = PhaseState(np.array([1.0, 2.0]), np.array([3.0, 4.0]))
        assert flow_invariant(s, np.array([2.0, 1.0]), np.zeros(2)) == pytest.approx(
            2 + 4 + 18 + 16)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 5).flatmap(lambda d: st.tuples(vec(d), vec(d), vec(d))),
       st.floats(0, 10), st.floats(0, 10))
def test_composition_and_conservation(xs, t1, t2):
    x_star, xi, v = xs
    s = PhaseState(x_star + xi, v)
    a = elliptical_flow(elliptical_flow(s, t1, x_star), t2, x_star)
    b = elliptical_flow(s, t1 + t2, x_star)
    scale = 1.0 + float(np.max(np.abs(np.r_[xi, v, x_star])))
    np.testing.assert_allclose(a.x, b.x, atol=1e-10 * scale)
    np.testing.assert_allclose(a.v, b.v, atol=1e-10 * scale)
    r0 = xi @ xi + v @ v
    r1 = flow_invariant(b, np.eye(len(xi)), x_star)
    assert abs(r1 - r0) <= 1e-10 * (1.0 + r0)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 4).flatmap(lambda d: st.tuples(vec(d), vec(d))), st.floats(0, 20))
def test_per_coordinate_radius_conserved(xv, dt):
    xi, v = xv
    x1, v1 = flow_centred(xi, v, dt)
    np.testing.assert_allclose(x1 ** 2 + v1 ** 2, xi ** 2 + v ** 2, atol=1e-10 * (1 + xi @ xi + v @ v))


def test_linear_flow():
    s = PhaseState(np.array([1.0, 2.0]), np.array([0.5, -1.0]), t=1.0)
    out = linear_flow(s, 2.0)
    np.testing.assert_allclose(out.x, [2.0, 0.0])
    np.testing.assert_array_equal(out.v, s.v)
    assert out.t == 3.0
