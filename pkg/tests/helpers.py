import numpy as np


def random_spd(rng, d):
    A = rng.standard_normal((d, d))
    return A @ A.T + 0.5 * np.eye(d)


class QuadraticTerms:
    """``E^i(x) = |x - mu_i|^2 / 2``: identical per-term Hessians."""

    def __init__(self, mus):
        self.mus = np.asarray(mus, dtype=float)
        self.n_terms, self.dim = self.mus.shape

    def energy(self, x):
        return float(np.mean(0.5 * np.sum((x - self.mus) ** 2, axis=1)))

    def grad(self, x):
        return x - self.mus.mean(axis=0)

    def hess(self, x):
        return np.eye(self.dim)

    def term_grad(self, i, x):
        return x - self.mus[i]

    def term_hess(self, i, x):
        return np.eye(self.dim)

    def term_hvp(self, i, x, w):
        return np.array(w, dtype=float)

    def term_hessian_variation(self):
        return 0.0
