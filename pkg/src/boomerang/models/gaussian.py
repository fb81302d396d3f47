"""Gaussian and separable polynomial energies."""

from __future__ import annotations

import numpy as np

from ..core import ContractError, EnergyTarget, ReferenceMeasure, TargetModel, BoundConstants


class GaussianEnergy:
    """``E(x) = (x - mean)' P (x - mean) / 2`` with precision ``P = cov^{-1}``."""

    def __init__(self, mean, cov):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.asarray(cov, dtype=float)
        if cov.ndim < 2:
            cov = np.diag(np.broadcast_to(cov, self.mean.shape).astype(float))
        self.cov = cov
        self.precision = np.linalg.inv(cov)
        self.precision = 0.5 * (self.precision + self.precision.T)
        self.dim = self.mean.shape[0]

    def energy(self, x):
        y = x - self.mean
        return 0.5 * float(y @ self.precision @ y)

    def grad(self, x):
        return self.precision @ (x - self.mean)

    def partial(self, i, x):
        return float(self.precision[i] @ (x - self.mean))

    def hess(self, x):
        return self.precision

    def hessian_range(self):
        return self.precision, self.precision

    def hessian_entry_range(self):
        return self.precision, self.precision

    def sample(self, rng, size):
        return rng.multivariate_normal(self.mean, self.cov, size=size)


class ZeroPotential(TargetModel):
    """``U = 0``: the target coincides with the reference measure."""

    def U(self, x):
        return 0.0

    def grad_U(self, x):
        return np.zeros(self.dim)

    def partial_U(self, i, x):
        return 0.0

    def bound_constants(self):
        d = self.dim
        return BoundConstants(M=0.0, m=0.0, C=0.0, c=np.zeros(d), M_i=np.zeros(d),
                              m_i=np.zeros(d))


def gaussian_target(mean, cov, ref: ReferenceMeasure = None) -> EnergyTarget:
    """Gaussian target relative to ``ref`` (default: the standard reference)."""
    energy = GaussianEnergy(mean, cov)
    if ref is None:
        ref = ReferenceMeasure.standard(energy.dim)
    return EnergyTarget(energy, ref)


class SeparableQuartic:
    """``E(x) = sum_i a_i x_i^2 / 2 + b_i x_i^4 / 4`` with ``a_i > 0, b_i >= 0``.

    Provides ball bounds for the gradient of ``U`` relative to any reference
    (gradient-bounded constant computational bounds need them since the
    Hessian is unbounded).
    """

    def __init__(self, a, b):
        self.a = np.atleast_1d(np.asarray(a, dtype=float))
        self.b = np.broadcast_to(np.asarray(b, dtype=float), self.a.shape).copy()
        if np.any(self.a <= 0) or np.any(self.b < 0):
            raise ContractError("need a > 0 and b >= 0")
        self.dim = self.a.shape[0]

    def energy(self, x):
        return float(np.sum(0.5 * self.a * x ** 2 + 0.25 * self.b * x ** 4))

    def grad(self, x):
        return self.a * x + self.b * x ** 3

    def partial(self, i, x):
        xi = x[i]
        return self.a[i] * xi + self.b[i] * xi ** 3

    def hess(self, x):
        return np.diag(self.a + 3 * self.b * x ** 2)

    def density_1d(self, i):
        a, b = self.a[i], self.b[i]
        return lambda s: np.exp(-(0.5 * a * s * s + 0.25 * b * s ** 4))

    def sample(self, rng, size: int) -> np.ndarray:
        """Exact draws by rejection from ``N(0, 1/a_i)`` with acceptance ``exp(-b_i x^4 / 4)``."""
        out = np.empty((size, self.dim))
        for i in range(self.dim):
            sd = 1.0 / np.sqrt(self.a[i])
            got = 0
            while got < size:
                z = sd * rng.standard_normal(2 * (size - got) + 16)
                keep = z[rng.random(z.size) < np.exp(-0.25 * self.b[i] * z ** 4)]
                take = min(keep.size, size - got)
                out[got:got + take, i] = keep[:take]
                got += take
        return out

    def u_gradient_ball_bound(self, ref: ReferenceMeasure, r):
        # grad U = (A - Sigma^{-1})(x - x*) + A x* + B x^3 on |x - x*| <= r
        R = float(np.linalg.norm(ref.x_star)) + r
        K = np.diag(self.a) - ref.sigma_inv
        k = float(np.abs(np.linalg.eigvalsh(K)).max())
        return k * r + float(np.linalg.norm(self.a * ref.x_star)) + float(self.b.max()) * R ** 3

    def u_partial_ball_bound(self, ref: ReferenceMeasure, i, r_i):
        if not ref.is_diagonal:
            raise ContractError("per-coordinate bounds need a diagonal reference")
        s2 = ref.diagonal[i]
        xs = ref.x_star[i]
        R = abs(xs) + r_i
        return abs(self.a[i] - 1 / s2) * r_i + abs(self.a[i] * xs) + self.b[i] * R ** 3
