"""Switching rates, velocity jump kernels, computational bounds and thinning.

Bounds are issued from a state in centred coordinates (``x - x_star``) and are
valid along the elliptical flow started from that state, which conserves
``|x|^2 + |v|^2`` (and, for diagonal ``Sigma`` under factorised dynamics, each
``x_i^2 + v_i^2``).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import ContractError, PhaseState, ReferenceMeasure

# ratio realized/bound above 1 + this is treated as a violation
VIOLATION_TOL = 1e-9


class BoundViolationError(RuntimeError):
    """A realised rate exceeded its computational bound."""


class BoundViolationWarning(RuntimeWarning):
    pass


class DegenerateGradientError(ArithmeticError):
    """Reflection requested through a (numerically) zero gradient."""


class EventKind(str, Enum):
    REFLECTION = "reflection"
    REFRESHMENT = "refreshment"
    COORDINATE_REFLECTION = "coordinate_reflection"
    SHADOW = "shadow"


@dataclass(frozen=True)
class EventBound:
    """Dominating rate ``a + b t`` for Poisson thinning."""

    a: float
    b: float = 0.0

    def __post_init__(self):
        if not (self.a >= 0 and self.b >= 0):
            raise ContractError(f"bound coefficients must be nonnegative, got a={self.a}, b={self.b}")

    @property
    def kind(self) -> str:
        return "constant" if self.b == 0 else "affine"

    def __call__(self, t: float) -> float:
        return self.a + self.b * t

    def integral(self, t: float) -> float:
        return self.a * t + 0.5 * self.b * t * t


def switching_rate(x, v, grad) -> float:
    """``<v, grad U(x)>_+``; ``x`` is accepted for signature symmetry only."""
    v = np.asarray(v, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if v.shape != grad.shape:
        raise ContractError("v and grad must have equal dimension")
    return max(float(v @ grad), 0.0)


def contour_reflect(x, v, grad, ref: ReferenceMeasure) -> np.ndarray:
    """Reflect ``v`` through the level set of ``U`` in the ``Sigma`` geometry.

    ``R v = v - 2 <grad, v> / |Sigma^{1/2} grad|^2 * Sigma grad``. It flips the
    sign of ``<v, grad>`` and preserves ``|Sigma^{-1/2} v|``.
    """
    v = np.asarray(v, dtype=float)
    grad = np.asarray(grad, dtype=float)
    sg = ref.sigma_dot(grad)
    gnorm2 = float(grad @ sg)
    if gnorm2 <= 0 or math.sqrt(gnorm2) < 1e-14 * float(np.linalg.norm(v)):
        raise DegenerateGradientError("|Sigma^{1/2} grad| is numerically zero")
    return v - (2.0 * float(grad @ v) / gnorm2) * sg


def factorised_rate(i: int, x, v, partial: float) -> float:
    """``(v_i * d_i U(x))_+``."""
    return max(float(v[i]) * partial, 0.0)


def flip_coordinate(v, i: int) -> np.ndarray:
    """Return a copy of ``v`` with coordinate ``i`` negated."""
    v = np.array(v, dtype=float)
    if not 0 <= i < v.shape[0]:
        raise IndexError(f"coordinate {i} out of range for dimension {v.shape[0]}")
    v[i] = -v[i]
    return v


def _radius_sq(state: PhaseState) -> float:
    return float(state.x @ state.x + state.v @ state.v)


def constant_bound_hessian(state: PhaseState, M: float, m: float) -> EventBound:
    """Constant bound from a global Hessian bound ``M`` and ``m = |grad U(0)|``."""
    r2 = _radius_sq(state)
    return EventBound(0.5 * M * r2 + m * math.sqrt(r2))


def affine_bound_hessian(state: PhaseState, grad_at_x0, M: float, m: float) -> EventBound:
    """Affine bound: ``a = <v, grad U(x0)>_+``, ``b = M r^2 + m r``."""
    r2 = _radius_sq(state)
    a = max(float(state.v @ np.asarray(grad_at_x0, dtype=float)), 0.0)
    return EventBound(a, M * r2 + m * math.sqrt(r2))


def constant_bound_gradient(state: PhaseState, C: float) -> EventBound:
    """Constant bound ``C r`` from a global gradient bound ``|grad U| <= C``."""
    return EventBound(C * math.sqrt(_radius_sq(state)))


def factorised_constant_bound(i: int, state: PhaseState, c_i: float) -> EventBound:
    """Per-coordinate constant bound ``c_i sqrt(x_i^2 + v_i^2)``."""
    return EventBound(c_i * math.hypot(state.x[i], state.v[i]))


def factorised_affine_bound(i: int, state: PhaseState, partial_at_x0: float,
                            M_i: float, m_i: float) -> EventBound:
    """Per-coordinate affine bound from Hessian row-norm bound ``M_i``."""
    a = max(float(state.v[i]) * partial_at_x0, 0.0)
    r_i = math.hypot(state.x[i], state.v[i])
    b = r_i * (m_i + M_i * math.sqrt(_radius_sq(state)))
    return EventBound(a, b)


def sample_event_time(bound: EventBound, rng=None, E: float = None) -> float:
    """First event time of a Poisson process with rate ``a + b t``.

    Inverts ``a t + b t^2 / 2 = E`` for ``E ~ Exp(1)`` (or the supplied ``E``).
    Returns ``inf`` when the rate is identically zero.
    """
    if E is None:
        E = rng.standard_exponential()
    a, b = bound.a, bound.b
    if b > 0:
        # 2E / (a + sqrt(a^2 + 2bE)) is the cancellation-free root
        den = a + math.sqrt(a * a + 2.0 * b * E)
        if den > 0:
            return 2.0 * E / den
        # a = 0 and 2bE underflowed
        return math.sqrt(2.0 * E) / math.sqrt(b)
    if a > 0:
        return E / a
    return math.inf


def thinning_accept(realized_rate: float, bound_value_at_t: float, rng=None,
                    strict: bool = True, u: float = None) -> bool:
    """Accept a proposed event with probability ``realized / bound``.

    Raises:
        BoundViolationError: if ``realized / bound > 1 + 1e-9`` and ``strict``.
            With ``strict=False`` a warning is issued and the event accepted.
    """
    if realized_rate <= 0:
        return False
    ratio = realized_rate / bound_value_at_t if bound_value_at_t > 0 else math.inf
    if ratio > 1.0 + VIOLATION_TOL:
        msg = f"realized rate {realized_rate!r} exceeds bound {bound_value_at_t!r}"
        if strict:
            raise BoundViolationError(msg)
        warnings.warn(msg, BoundViolationWarning, stacklevel=2)
        return True
    if u is None:
        u = rng.random()
    return u < ratio
