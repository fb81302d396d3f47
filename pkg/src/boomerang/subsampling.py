"""Unbiased single-term gradient estimators for ``E = (1/n) sum_i E^i``.

All estimators take centred positions ``xi = x - x_star`` and estimate
``grad U(x) = grad E(x) - Sigma^{-1} xi``. When ``Sigma^{-1} = Hess E(x_star)``
(the preconditioned choice made by :func:`build_preconditioner`) the
control-variate estimator reduces to the textbook

    G^i(x) = grad E^i(x) - Hess E^i(x_star) xi - grad E^i(x_star) + grad E(x_star).

For any other ``Sigma`` a deterministic term ``(Hess E(x_star) - Sigma^{-1}) xi``
is added so the estimator stays unbiased.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import ContractError, PhaseState, ReferenceMeasure
from .events import EventBound, contour_reflect


class PreconditioningError(RuntimeError):
    """Mode search failed or the Hessian at the mode is not SPD."""


@dataclass
class GLMTerms:
    """Per-term data for energies ``E^i(x) = n l_i(y_i'x) + (quadratic shared by all i)``.

    For such models the control-variate estimate is
    ``G^i(x) = n y_i [m(a_i + u) - m(a_i) - m'(a_i) u] + grad E(x_star) (+ correction)``
    with ``a_i = y_i'x_star`` and ``u = y_i'xi``, so one draw costs ``O(d)`` scalar work.
    """

    design: np.ndarray
    rows: list
    mean: object
    a_ref: list
    mean_ref: list
    slope_ref: list


class ControlVariateCache:
    """Quantities at the reference point reused by every control-variate draw.

    Per-term Hessians are kept matrix-free: the cache holds a reference to the
    model and evaluates ``Hess E^i(x_star) w`` on demand, so memory is
    ``O(n d)`` for the stored per-term gradients.

    Args:
        model: Sum-structured target (``n_terms > 0``).
        ref: Reference measure; its centre is the expansion point.
    """

    def __init__(self, model, ref: ReferenceMeasure):
        n = model.n_terms
        if n <= 0:
            raise ContractError("control variates need a sum-structured model")
        self.model = model
        self.ref = ref
        self.n = n
        x_star = ref.x_star
        energy = getattr(model, "energy", None)
        if energy is not None and hasattr(energy, "term_grads"):
            self.grad_at_ref_terms = np.asarray(energy.term_grads(x_star), dtype=float)
        else:
            self.grad_at_ref_terms = np.array([model.term_grad_E(i, x_star) for i in range(n)])
        self.grad_at_ref_full = np.asarray(model.grad_E(x_star), dtype=float)
        hess_full = np.asarray(model.hess_E(x_star), dtype=float)
        correction = hess_full - ref.sigma_inv
        scale = max(np.abs(ref.sigma_inv).max(), 1e-300)
        if np.abs(correction).max() <= 1e-10 * scale:
            self.correction: Optional[np.ndarray] = None
            self.correction_norm = 0.0
        else:
            self.correction = correction
            self.correction_norm = float(np.abs(np.linalg.eigvalsh(correction)).max())
        self.grad_at_ref_norm = float(np.linalg.norm(self.grad_at_ref_full))
        self.glm = None
        if energy is not None and hasattr(energy, "glm_structure"):
            Y, mean, mean_vec, slope_vec = energy.glm_structure()
            a = Y @ x_star
            self.glm = GLMTerms(Y, Y.tolist(), mean, a.tolist(), mean_vec(a).tolist(),
                                slope_vec(a).tolist())
        self.max_term_grad_norm = float(np.linalg.norm(self.grad_at_ref_terms, axis=1).max())

    def hess_at_ref(self, i: int, w: np.ndarray) -> np.ndarray:
        """``Hess E^i(x_star) @ w``."""
        return self.model.term_hvp_E(i, self.ref.x_star, w)


def _check_index(i, n):
    if not 0 <= i < n:
        raise IndexError(f"term index {i} out of range for n={n}")


def naive_estimator(x, i: int, model, ref: ReferenceMeasure) -> np.ndarray:
    """``grad E^i(x) - Sigma^{-1} xi``; unbiased but with ``O(n)`` spread."""
    _check_index(i, model.n_terms)
    xi = np.asarray(x, dtype=float)
    return model.term_grad_E(i, ref.x_star + xi) - ref.sigma_inv_dot(xi)


def cv_estimator(x, i: int, cache: ControlVariateCache, model) -> np.ndarray:
    """Control-variate gradient estimate ``G^i`` at centred position ``x``."""
    _check_index(i, cache.n)
    xi = np.asarray(x, dtype=float)
    x_star = cache.ref.x_star
    g = (model.term_grad_E(i, x_star + xi)
         - model.term_hvp_E(i, x_star, xi)
         - cache.grad_at_ref_terms[i]
         + cache.grad_at_ref_full)
    if cache.correction is not None:
        g = g + cache.correction @ xi
    return g


def subsampled_reflect(x, v, G_i, ref: ReferenceMeasure) -> np.ndarray:
    """Contour reflection through the estimated gradient ``G_i``."""
    return contour_reflect(x, v, G_i, ref)


def _q_norm_sq(Q, y):
    Q = np.asarray(Q, dtype=float)
    if Q.ndim < 2:
        return float(np.sum(Q * y * y))
    return float(y @ Q @ y)


def subsampling_bound(state: PhaseState, Q, grad_E_at_ref_norm: float,
                      correction_norm: float = 0.0) -> EventBound:
    """Constant bound dominating ``<v_t, G^i(x_t)>`` for every term ``i``.

    ``a = (|Q^{1/2} x|^2 + |Q^{1/2} v|^2)/2 + r |grad E(x_star)|`` with
    ``r^2 = |x|^2 + |v|^2``; ``Q`` may be a scalar, a diagonal or a matrix.
    ``correction_norm`` covers the extra term used when ``Sigma`` is not the
    inverse Hessian at ``x_star``.
    """
    x, v = state.x, state.v
    r2 = float(x @ x + v @ v)
    a = 0.5 * (_q_norm_sq(Q, x) + _q_norm_sq(Q, v)) + math.sqrt(r2) * grad_E_at_ref_norm
    if correction_norm:
        a += 0.5 * correction_norm * r2
    return EventBound(a)


def naive_subsampling_bound(state: PhaseState, Q_naive: float,
                            max_term_grad_norm: float) -> EventBound:
    """Constant bound dominating ``<v_t, grad E^i(x_t) - Sigma^{-1} x_t>`` for all ``i``.

    Expanding around ``x_star``: the first-order part is at most
    ``r max_i |grad E^i(x_star)|``, the remainder at most ``Q_naive r^2 / 2``
    where ``-Q_naive I <= Hess E^i(y) - Sigma^{-1} <= Q_naive I``.
    """
    x, v = state.x, state.v
    r2 = float(x @ x + v @ v)
    return EventBound(0.5 * Q_naive * r2 + math.sqrt(r2) * max_term_grad_norm)


def naive_hessian_spread(model, ref: ReferenceMeasure) -> float:
    """Scalar ``Q`` with ``|Hess E^i(y) - Sigma^{-1}| <= Q`` for all ``i, y``."""
    energy = getattr(model, "energy", model)
    lo, hi = energy.term_hessian_scalar_range()
    eig = np.linalg.eigvalsh(ref.sigma_inv)
    return float(max(abs(hi - eig[0]), abs(lo - eig[-1])))


@dataclass
class NewtonConfig:
    """Damped Newton settings for locating ``x_star``."""

    x0: Optional[np.ndarray] = None
    max_iter: int = 200
    tol: float = 1e-8
    armijo: float = 1e-4
    min_step: float = 1e-12


def _energy_funcs(model):
    if hasattr(model, "grad_E") and not hasattr(model, "grad"):
        return model.E, model.grad_E, model.hess_E
    return model.energy, model.grad, model.hess


def build_preconditioner(model, optimizer_config: NewtonConfig = None):
    """Find a mode of ``E`` and return ``(x_star, Sigma = Hess E(x_star)^{-1})``.

    Args:
        model: Object exposing ``energy/grad/hess`` (or ``E/grad_E/hess_E``).
        optimizer_config: :class:`NewtonConfig`; defaults start at the origin.

    Raises:
        PreconditioningError: if Newton does not reach
            ``|grad E| <= tol (1 + |grad E(x0)|)`` within ``max_iter`` steps, or
            the Hessian at the solution is not positive definite.
    """
    cfg = optimizer_config or NewtonConfig()
    E, grad, hess = _energy_funcs(model)
    x = np.zeros(model.dim) if cfg.x0 is None else np.array(cfg.x0, dtype=float)
    g = grad(x)
    target = cfg.tol * (1.0 + np.linalg.norm(g))
    fx = E(x)
    for _ in range(cfg.max_iter + 1):
        if np.linalg.norm(g) <= target:
            break
        H = hess(x)
        try:
            step = -np.linalg.solve(H, g)
            if step @ g >= 0:
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            step = -g
        alpha = 1.0
        while True:
            x_new = x + alpha * step
            f_new = E(x_new)
            if f_new <= fx + cfg.armijo * alpha * (g @ step) or alpha < cfg.min_step:
                break
            alpha *= 0.5
        if alpha < cfg.min_step:
            # line search stalled: accept the full Newton point if it reduces |grad|
            x_new = x + step
            f_new = E(x_new)
        x, fx = x_new, f_new
        g = grad(x)
    else:
        raise PreconditioningError(
            f"Newton did not converge in {cfg.max_iter} iterations (|grad E| = {np.linalg.norm(g):.3e})")
    H = np.asarray(hess(x), dtype=float)
    H = 0.5 * (H + H.T)
    eig = np.linalg.eigvalsh(H)
    if eig[0] <= 0:
        raise PreconditioningError(
            f"Hessian at the mode is not positive definite (smallest eigenvalue {eig[0]:.3e})")
    sigma = np.linalg.inv(H)
    sigma = 0.5 * (sigma + sigma.T)
    return x, sigma
