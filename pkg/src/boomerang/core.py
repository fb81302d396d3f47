"""Phase state, Gaussian reference measure and the target-model contract.

Every sampler in the package consumes a :class:`TargetModel`: a potential ``U``
expressed as a density ``exp(-U)`` relative to the Gaussian reference measure
``N(x_star, Sigma) x N(0, Sigma)`` held by a :class:`ReferenceMeasure`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg


class ContractError(ValueError):
    """Raised when an argument violates a documented precondition."""


@dataclass
class PhaseState:
    """Instantaneous state of a PDMP: position, velocity and process clock."""

    x: np.ndarray
    v: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.x = np.atleast_1d(np.asarray(self.x, dtype=float))
        self.v = np.atleast_1d(np.asarray(self.v, dtype=float))
        if self.x.ndim != 1 or self.x.shape != self.v.shape:
            raise ContractError(
                f"x and v must be vectors of equal length, got {self.x.shape} "
                f"and {self.v.shape}")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.v))):
            raise ContractError("phase state entries must be finite")
        if not np.isfinite(self.t) or self.t < 0:
            raise ContractError(f"clock must be finite and nonnegative, got {self.t}")

    @property
    def dim(self) -> int:
        return self.x.shape[0]

    def copy(self) -> "PhaseState":
        return PhaseState(self.x.copy(), self.v.copy(), self.t)


class ReferenceMeasure:
    """Gaussian reference ``N(x_star, Sigma) x N(0, Sigma)``.

    The covariance is factored once at construction. Diagonal covariances get a
    vector fast path, which the factorised sampler requires.

    Args:
        x_star: Centre of the position marginal.
        sigma: Covariance, either a ``d x d`` SPD matrix or a length-``d``
            vector of variances (interpreted as a diagonal covariance).
    """

    def __init__(self, x_star, sigma):
        x_star = np.atleast_1d(np.asarray(x_star, dtype=float))
        sigma = np.asarray(sigma, dtype=float)
        d = x_star.shape[0]
        if sigma.ndim == 0:
            sigma = np.full(d, float(sigma))
        if sigma.ndim == 1:
            if sigma.shape != (d,):
                raise ContractError("variance vector has wrong length")
            if np.any(sigma <= 0) or not np.all(np.isfinite(sigma)):
                raise ContractError("variances must be positive and finite")
            self.diagonal: Optional[np.ndarray] = sigma.copy()
            sigma = np.diag(sigma)
        else:
            if sigma.shape != (d, d):
                raise ContractError(f"sigma must be {d}x{d}, got {sigma.shape}")
            if not np.allclose(sigma, sigma.T, rtol=1e-12, atol=1e-14 * np.abs(sigma).max()):
                raise ContractError("sigma must be symmetric")
            sigma = 0.5 * (sigma + sigma.T)
            off = sigma - np.diag(np.diag(sigma))
            self.diagonal = np.diag(sigma).copy() if not np.any(off) else None
        try:
            factor = np.linalg.cholesky(sigma)
        except np.linalg.LinAlgError as exc:
            raise ContractError("sigma must be positive definite") from exc
        self.x_star = x_star
        self.sigma = sigma
        self.sigma_factor = factor
        if self.diagonal is not None:
            self.sigma_inv = np.diag(1.0 / self.diagonal)
            self._sd = np.sqrt(self.diagonal)
            self._inv_diag = 1.0 / self.diagonal
        else:
            eye = np.eye(d)
            linv = scipy.linalg.solve_triangular(factor, eye, lower=True)
            self.sigma_inv = linv.T @ linv
            self.sigma_inv = 0.5 * (self.sigma_inv + self.sigma_inv.T)
            self._sd = None
            self._inv_diag = None
        self._factor_inv_t = None

    @classmethod
    def standard(cls, d: int) -> "ReferenceMeasure":
        return cls(np.zeros(d), np.ones(d))

    @property
    def dim(self) -> int:
        return self.x_star.shape[0]

    @property
    def is_diagonal(self) -> bool:
        return self.diagonal is not None

    def centre(self, x: np.ndarray) -> np.ndarray:
        return x - self.x_star

    def uncentre(self, xi: np.ndarray) -> np.ndarray:
        return xi + self.x_star

    def sigma_dot(self, g: np.ndarray) -> np.ndarray:
        """Return ``Sigma @ g``."""
        if self.diagonal is not None:
            return self.diagonal * g
        return self.sigma @ g

    def sigma_inv_dot(self, x: np.ndarray) -> np.ndarray:
        """Return ``Sigma^{-1} @ x``."""
        if self._inv_diag is not None:
            return self._inv_diag * x
        return self.sigma_inv @ x

    def sigma_norm_sq(self, g: np.ndarray) -> float:
        """Return ``|Sigma^{1/2} g|^2 = g' Sigma g``."""
        return float(g @ self.sigma_dot(g))

    def sigma_inv_norm_sq(self, v: np.ndarray) -> float:
        """Return ``|Sigma^{-1/2} v|^2``."""
        return float(v @ self.sigma_inv_dot(v))

    def whiten(self, v: np.ndarray) -> np.ndarray:
        """Return ``L^{-1} v``; standard normal when ``v ~ N(0, Sigma)``."""
        if self._sd is not None:
            return v / self._sd
        return scipy.linalg.solve_triangular(self.sigma_factor, v, lower=True)

    def colour(self, z: np.ndarray) -> np.ndarray:
        """Return ``L z``."""
        if self._sd is not None:
            return self._sd * z
        return self.sigma_factor @ z

    def sample_position(self, rng: np.random.Generator) -> np.ndarray:
        return self.x_star + self.colour(rng.standard_normal(self.dim))


def u_from_e(E_value: float, x, ref: ReferenceMeasure) -> float:
    """Convert a Lebesgue energy ``E(x)`` into the potential relative to ``ref``.

    Returns ``E(x) - 0.5 (x - x_star)' Sigma^{-1} (x - x_star)``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (ref.dim,):
        raise ContractError(f"x has shape {x.shape}, reference has dimension {ref.dim}")
    xi = x - ref.x_star
    return float(E_value) - 0.5 * ref.sigma_inv_norm_sq(xi)


def sample_velocity(ref: ReferenceMeasure, rng) -> np.ndarray:
    """Draw ``v ~ N(0, Sigma)`` as ``L z`` with ``z`` standard normal."""
    return ref.colour(rng.standard_normal(ref.dim))


@dataclass
class BoundConstants:
    """Constants feeding the computational bounds; ``None`` when unavailable.

    Attributes:
        M: Global bound on the operator norm of the Hessian of ``U``.
        m: ``|grad U(x_star)|``.
        C: Global bound on ``|grad U|``.
        c: Per-coordinate global bounds on ``|d_i U|``.
        M_i: Per-coordinate bounds on the Hessian row norms of ``U``.
        m_i: ``|d_i U(x_star)|``.
        Q: Scalar ``c`` with ``Hess E^i(y1) - Hess E^i(y2) <= c I`` for all terms.
    """

    M: Optional[float] = None
    m: Optional[float] = None
    C: Optional[float] = None
    c: Optional[np.ndarray] = None
    M_i: Optional[np.ndarray] = None
    m_i: Optional[np.ndarray] = None
    Q: Optional[float] = None


class TargetModel:
    """Potential ``U`` relative to a reference measure.

    Subclasses implement :meth:`U` and :meth:`grad_U`; sum-structured targets
    also set ``n_terms`` and the per-term energy methods. Positions passed to
    every method are uncentred.
    """

    n_terms: int = 0

    def __init__(self, ref: ReferenceMeasure):
        self.ref = ref

    @property
    def dim(self) -> int:
        return self.ref.dim

    def U(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def grad_U(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def partial_U(self, i: int, x: np.ndarray) -> float:
        return float(self.grad_U(x)[i])

    def bound_constants(self) -> BoundConstants:
        return BoundConstants()

    def gradient_bound_on_ball(self, r: float) -> Optional[float]:
        """Bound on ``|grad U(x)|`` over ``|x - x_star| <= r``, if known."""
        C = self.bound_constants().C
        return C

    def partial_bound_on_ball(self, i: int, r_i: float) -> Optional[float]:
        """Bound on ``|d_i U(x)|`` over ``|x_i - x_star_i| <= r_i`` (separable targets)."""
        c = self.bound_constants().c
        return None if c is None else float(c[i])

    # sum-structured targets, E = (1/n) sum_i E^i
    def E(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def grad_E(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hess_E(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def term_grad_E(self, i: int, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def term_hess_E(self, i: int, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def term_hvp_E(self, i: int, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        return self.term_hess_E(i, x) @ w


class EnergyTarget(TargetModel):
    """Target built from a Lebesgue energy ``E`` and a reference measure.

    ``U(x) = E(x) - 0.5 (x - x_star)' Sigma^{-1} (x - x_star)``. The energy
    object supplies ``energy``, ``grad`` and optionally ``hess``,
    ``hessian_range`` (Loewner bounds), ``hessian_entry_range`` (entrywise
    bounds) and the per-term methods of a sum-structured energy.
    """

    def __init__(self, energy, ref: ReferenceMeasure):
        super().__init__(ref)
        if energy.dim != ref.dim:
            raise ContractError(
                f"energy dimension {energy.dim} does not match reference dimension {ref.dim}")
        self.energy = energy
        self.n_terms = getattr(energy, "n_terms", 0)
        self._constants: Optional[BoundConstants] = None

    def U(self, x):
        return u_from_e(self.energy.energy(x), x, self.ref)

    def grad_U(self, x):
        return self.energy.grad(x) - self.ref.sigma_inv_dot(x - self.ref.x_star)

    def partial_U(self, i, x):
        if hasattr(self.energy, "partial"):
            xi = x[i] - self.ref.x_star[i]
            if self.ref.is_diagonal:
                return self.energy.partial(i, x) - xi / self.ref.diagonal[i]
            return self.energy.partial(i, x) - float(self.ref.sigma_inv[i] @ (x - self.ref.x_star))
        return float(self.grad_U(x)[i])

    def hess_U(self, x):
        return self.energy.hess(x) - self.ref.sigma_inv

    def E(self, x):
        return self.energy.energy(x)

    def grad_E(self, x):
        return self.energy.grad(x)

    def hess_E(self, x):
        return self.energy.hess(x)

    def term_grad_E(self, i, x):
        return self.energy.term_grad(i, x)

    def term_hess_E(self, i, x):
        return self.energy.term_hess(i, x)

    def term_hvp_E(self, i, x, w):
        return self.energy.term_hvp(i, x, w)

    def bound_constants(self) -> BoundConstants:
        if self._constants is None:
            self._constants = self._compute_constants()
        return self._constants

    def _compute_constants(self) -> BoundConstants:
        ref = self.ref
        grad_star = self.grad_U(ref.x_star)
        out = BoundConstants(m=float(np.linalg.norm(grad_star)),
                             m_i=np.abs(grad_star))
        if hasattr(self.energy, "hessian_range"):
            lo, hi = self.energy.hessian_range()
            # lo - Sigma^{-1} <= Hess U <= hi - Sigma^{-1}
            lam_lo = np.linalg.eigvalsh(lo - ref.sigma_inv)[0]
            lam_hi = np.linalg.eigvalsh(hi - ref.sigma_inv)[-1]
            out.M = float(max(abs(lam_lo), abs(lam_hi)))
        if hasattr(self.energy, "hessian_entry_range"):
            lo, hi = self.energy.hessian_entry_range()
            bound = np.maximum(np.abs(lo - ref.sigma_inv), np.abs(hi - ref.sigma_inv))
            out.M_i = np.sqrt(np.sum(bound ** 2, axis=1))
        if hasattr(self.energy, "term_hessian_variation"):
            out.Q = float(self.energy.term_hessian_variation())
        return out

    def gradient_bound_on_ball(self, r):
        if hasattr(self.energy, "u_gradient_ball_bound"):
            return self.energy.u_gradient_ball_bound(self.ref, r)
        return super().gradient_bound_on_ball(r)

    def partial_bound_on_ball(self, i, r_i):
        if hasattr(self.energy, "u_partial_ball_bound"):
            return self.energy.u_partial_ball_bound(self.ref, i, r_i)
        return super().partial_bound_on_ball(i, r_i)


def finite_difference_gradient(f: Callable[[np.ndarray], float], x: np.ndarray) -> np.ndarray:
    """Central differences with step ``1e-5 (1 + |x_i|)`` per coordinate."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.shape[0]):
        h = 1e-5 * (1.0 + abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g
