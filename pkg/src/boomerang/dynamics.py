"""Exact elliptical flow ``dx/dt = v, dv/dt = -(x - x_star)``."""

from __future__ import annotations

import math

import numpy as np

from .core import ContractError, PhaseState

TWO_PI = 2.0 * math.pi

# trig arguments beyond this are reduced mod 2 pi before evaluation
_REDUCE_ABOVE = 1e6


def rotation(dt: float):
    """Return ``(cos dt, sin dt)`` with argument reduction for very long steps."""
    if dt > _REDUCE_ABOVE:
        dt = math.fmod(dt, TWO_PI)
    return math.cos(dt), math.sin(dt)


def flow_centred(xi: np.ndarray, v: np.ndarray, dt: float):
    """Flow centred coordinates ``xi = x - x_star`` forward by ``dt``."""
    c, s = rotation(dt)
    return xi * c + v * s, v * c - xi * s


def elliptical_flow(state: PhaseState, dt: float, x_star) -> PhaseState:
    """Advance ``state`` along the Boomerang ODE by ``dt``.

    Args:
        state: Starting phase state (uncentred position).
        dt: Nonnegative time increment.
        x_star: Centre of the reference measure.

    Returns:
        A new :class:`PhaseState` with clock ``state.t + dt``.
    """
    if not (dt >= 0 and math.isfinite(dt)):
        raise ContractError(f"dt must be finite and nonnegative, got {dt}")
    x_star = np.asarray(x_star, dtype=float)
    xi, v = flow_centred(state.x - x_star, state.v, dt)
    return PhaseState(x_star + xi, v, state.t + dt)


def flow_invariant(state: PhaseState, Q, x_star) -> float:
    """``<x - x_star, Q (x - x_star)> + <v, Q v>``, conserved along the flow."""
    Q = np.asarray(Q, dtype=float)
    xi = state.x - np.asarray(x_star, dtype=float)
    if Q.ndim < 2:
        q = np.broadcast_to(Q, xi.shape)
        return float(xi @ (q * xi) + state.v @ (q * state.v))
    return float(xi @ Q @ xi + state.v @ Q @ state.v)


def linear_flow(state: PhaseState, dt: float) -> PhaseState:
    """Constant-velocity flow used by the bouncy particle and Zig-Zag samplers."""
    if not (dt >= 0 and math.isfinite(dt)):
        raise ContractError(f"dt must be finite and nonnegative, got {dt}")
    return PhaseState(state.x + dt * state.v, state.v.copy(), state.t + dt)
