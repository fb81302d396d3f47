"""Diffusion bridges ``dX = alpha sin(X) dt + dW`` in a Faber-Schauder basis.

Coefficients are stored flat: ``x_{i,j}`` sits at index ``2**i - 1 + j``. The
coefficient law has density ``exp(-U)`` relative to ``N(0, I)`` with

    U(x) = (alpha/2) int_0^T (alpha sin^2 X_t + cos X_t) dt

(up to an additive constant), so ``d U / d x_{i,j}`` is
``(alpha/2) int phi_{i,j}(t) (alpha sin 2X_t - sin X_t) dt``.
"""

from __future__ import annotations

import math

import numpy as np

from ..core import BoundConstants, ContractError, ReferenceMeasure, TargetModel


class FaberSchauderBasis:
    """Truncated Faber-Schauder expansion on ``[0, T]`` pinned at ``u`` and ``v``."""

    def __init__(self, T: float, N: int, u: float = 0.0, v: float = 0.0):
        if not T > 0:
            raise ContractError("T must be positive")
        if N < 0:
            raise ContractError("truncation level must be nonnegative")
        self.T = float(T)
        self.N = int(N)
        self.u = float(u)
        self.v = float(v)
        self.dimension = 2 ** (self.N + 1) - 1
        k = np.arange(self.dimension)
        self.level = np.floor(np.log2(k + 1)).astype(int)
        self.position = k - (2 ** self.level - 1)
        self._sqrtT = math.sqrt(self.T)
        self._lev_scale = [2.0 ** (-i / 2) * self._sqrtT for i in range(self.N + 1)]

    @staticmethod
    def index(i: int, j: int) -> int:
        return 2 ** i - 1 + j

    def support(self, i: int, j: int):
        w = self.T / 2 ** i
        return j * w, (j + 1) * w

    def support_length(self, i: int) -> float:
        return self.T * 2.0 ** (-i)

    def peak(self, i: int) -> float:
        """``max_t phi_{i,j}(t) = 2^{-i/2} sqrt(T) / 2``."""
        return 0.5 * self._lev_scale[i]

    def phi(self, i: int, j: int, t):
        """Basis function ``phi_{i,j}`` at ``t`` (scalar or array)."""
        s = (np.asarray(t, dtype=float) * 2 ** i - j * self.T) / self.T
        hat = np.where((s >= 0) & (s <= 0.5), s, np.where((s > 0.5) & (s <= 1), 1 - s, 0.0))
        out = self._lev_scale[i] * hat
        return float(out) if out.ndim == 0 else out

    def _phi_scalar(self, i, j, t):
        s = (t * (1 << i) - j * self.T) / self.T
        if s < 0 or s > 1:
            return 0.0
        return self._lev_scale[i] * (s if s <= 0.5 else 1.0 - s)

    def path_indices(self, t: float):
        """Flat indices and basis values of the (at most ``N+1``) functions nonzero at ``t``."""
        T = self.T
        out = []
        for i in range(self.N + 1):
            j = min(int(t * (1 << i) / T), (1 << i) - 1)
            out.append(((1 << i) - 1 + j, self._phi_scalar(i, j, t)))
        return out

    def evaluate(self, coeffs, t):
        """``X^N_t`` for a scalar or array of times."""
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape[-1] != self.dimension:
            raise ContractError(
                f"expected {self.dimension} coefficients, got {coeffs.shape[-1]}")
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < 0) or np.any(t_arr > self.T):
            raise ContractError("t outside [0, T]")
        T = self.T
        tt = np.atleast_1d(t_arr)
        out = (1 - tt / T) * self.u + (tt / T) * self.v
        out = np.broadcast_to(out, coeffs.shape[:-1] + tt.shape).copy()
        for i in range(self.N + 1):
            j = np.minimum((tt * 2 ** i / T).astype(int), 2 ** i - 1)
            s = (tt * 2 ** i - j * T) / T
            hat = np.where(s <= 0.5, s, 1 - s)
            out += self._lev_scale[i] * hat * coeffs[..., 2 ** i - 1 + j]
        if t_arr.ndim == 0:
            out = out[..., 0]
            return float(out) if out.ndim == 0 else out
        return out


def faber_schauder_eval(basis: FaberSchauderBasis, coeffs, t) -> float:
    """``X^N_t = (1 - t/T) u + (t/T) v + sum_{i,j} phi_{i,j}(t) x_{i,j}``."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (basis.dimension,):
        raise ContractError(f"expected {basis.dimension} coefficients")
    if not 0 <= t <= basis.T:
        raise ContractError(f"t={t} outside [0, {basis.T}]")
    T = basis.T
    val = (1 - t / T) * basis.u + (t / T) * basis.v
    for k, ph in basis.path_indices(t):
        val += ph * coeffs[k]
    return val


def _gauss_nodes(basis: FaberSchauderBasis, a: float, b: float, per_cell: int):
    # cells of width T 2^{-(N+1)}: X^N is linear on each, so the integrand is smooth
    width = basis.T / 2 ** (basis.N + 1)
    n_cells = max(1, int(round((b - a) / width)))
    g, w = np.polynomial.legendre.leggauss(per_cell)
    edges = a + width * np.arange(n_cells)
    t = (edges[:, None] + 0.5 * width * (g[None, :] + 1)).ravel()
    wt = np.tile(0.5 * width * w, n_cells)
    return t, wt


def bridge_partial_U(i: int, j: int, coeffs, basis: FaberSchauderBasis, alpha: float,
                     quadrature: int = 16) -> float:
    """Quadrature value of ``d U / d x_{i,j}``.

    Uses composite Gauss-Legendre with ``quadrature`` nodes per finest cell of
    the support.
    """
    if quadrature < 16:
        raise ContractError("use at least 16 nodes per cell")
    a, b = basis.support(i, j)
    t, w = _gauss_nodes(basis, a, b, quadrature)
    X = basis.evaluate(coeffs, t)
    integrand = basis.phi(i, j, t) * (alpha * np.sin(2 * X) - np.sin(X))
    return 0.5 * alpha * float(integrand @ w)


def bridge_subsampled_partial(i: int, j: int, coeffs, basis: FaberSchauderBasis,
                              alpha: float, rng) -> float:
    """Single-point unbiased estimate of ``d U / d x_{i,j}``.

    Draws ``tau`` uniform on the support ``S_{i,j}`` and returns
    ``|S_{i,j}|/2 * phi_{i,j}(tau) (alpha^2 sin 2X_tau - alpha sin X_tau)``.
    """
    a, b = basis.support(i, j)
    tau = a + (b - a) * rng.random()
    X = faber_schauder_eval(basis, coeffs, tau)
    return 0.5 * (b - a) * basis._phi_scalar(i, j, tau) * (
        alpha * alpha * math.sin(2 * X) - alpha * math.sin(X))


def bridge_bound_constants(basis: FaberSchauderBasis, alpha: float) -> np.ndarray:
    """Per-coefficient ``m_{i,j} = |S_i|/2 * max phi_{i,j} * (alpha^2 + alpha)``."""
    levels = basis.level
    S = basis.T * 2.0 ** (-levels)
    peak = 0.5 * math.sqrt(basis.T) * 2.0 ** (-levels / 2)
    return 0.5 * S * peak * (alpha * alpha + alpha)


class BridgeModel(TargetModel):
    """Coefficient target for the sine-drift bridge, relative to ``N(0, I)``."""

    def __init__(self, basis: FaberSchauderBasis, alpha: float, quadrature: int = 16):
        if alpha < 0:
            raise ContractError("alpha must be nonnegative")
        super().__init__(ReferenceMeasure.standard(basis.dimension))
        self.basis = basis
        self.alpha = float(alpha)
        self.quadrature = quadrature
        self.m = bridge_bound_constants(basis, alpha)
        self._t_all, self._w_all = _gauss_nodes(basis, 0.0, basis.T, quadrature)
        self._level_tables = []
        for i in range(basis.N + 1):
            t = self._t_all
            j = np.minimum((t * 2 ** i / basis.T).astype(int), 2 ** i - 1)
            self._level_tables.append((j, _phi_level(basis, i, j, t)))

    def U(self, x):
        X = self.basis.evaluate(x, self._t_all)
        a = self.alpha
        return 0.5 * a * float((a * np.sin(X) ** 2 + np.cos(X)) @ self._w_all)

    def grad_U(self, x):
        X = self.basis.evaluate(x, self._t_all)
        a = self.alpha
        g = 0.5 * a * (a * np.sin(2 * X) - np.sin(X)) * self._w_all
        out = np.empty(self.basis.dimension)
        for i, (j, ph) in enumerate(self._level_tables):
            out[2 ** i - 1: 2 ** (i + 1) - 1] = np.bincount(j, weights=ph * g, minlength=2 ** i)
        return out

    def partial_U(self, k, x):
        b = self.basis
        return bridge_partial_U(int(b.level[k]), int(b.position[k]), x, b, self.alpha,
                                self.quadrature)

    def bound_constants(self):
        # |estimate| <= m bounds the exact partial as well
        return BoundConstants(c=self.m.copy())

    def local_subsampled_partial(self, k: int, get, rng) -> float:
        """Subsampled ``d U / d x_k`` reading only the ``N+1`` coefficients live at ``tau``.

        ``get(j)`` returns the current value of coefficient ``j``.
        """
        b = self.basis
        i = int(b.level[k])
        j = k - (1 << i) + 1
        T = b.T
        width = T / (1 << i)
        tau = j * width + width * rng.random()
        X = (1 - tau / T) * b.u + (tau / T) * b.v
        for kk, ph in b.path_indices(tau):
            if ph != 0.0:
                X += ph * get(kk)
        a = self.alpha
        return 0.5 * width * b._phi_scalar(i, j, tau) * (a * a * math.sin(2 * X) - a * math.sin(X))


def _phi_level(basis, i, j, t):
    s = (t * 2 ** i - j * basis.T) / basis.T
    return basis._lev_scale[i] * np.where(s <= 0.5, s, 1 - s)
