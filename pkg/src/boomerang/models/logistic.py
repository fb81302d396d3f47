"""Bayesian logistic regression with an isotropic Gaussian (or flat) prior.

The energy is ``E(x) = sum_i [log(1 + exp(x'y_i)) - z_i x'y_i] + |x|^2 / (2 s2)``.
For subsampling it is written as ``E = (1/n) sum_i E^i`` with
``E^i(x) = n [log(1 + exp(x'y_i)) - z_i x'y_i] + |x|^2 / (2 s2)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ..core import ContractError


@dataclass
class LogisticData:
    predictors: np.ndarray
    outcomes: np.ndarray
    prior_variance: float = math.inf

    def __post_init__(self):
        self.predictors = np.atleast_2d(np.asarray(self.predictors, dtype=float))
        self.outcomes = np.asarray(self.outcomes, dtype=float).ravel()
        n, d = self.predictors.shape
        if n < 1 or d < 1:
            raise ContractError("need at least one observation and one predictor")
        if self.outcomes.shape != (n,):
            raise ContractError("outcomes must have one entry per predictor row")
        if not np.all((self.outcomes == 0) | (self.outcomes == 1)):
            raise ContractError("outcomes must be 0 or 1")
        if not self.prior_variance > 0:
            raise ContractError("prior variance must be positive (inf for a flat prior)")

    @property
    def n(self):
        return self.predictors.shape[0]

    @property
    def d(self):
        return self.predictors.shape[1]

    @property
    def prior_precision(self):
        return 0.0 if math.isinf(self.prior_variance) else 1.0 / self.prior_variance


def _sigmoid(a: float) -> float:
    if a >= 0:
        return 1.0 / (1.0 + math.exp(-a))
    e = math.exp(a)
    return e / (1.0 + e)


def logistic_energy(x, data: LogisticData) -> float:
    a = data.predictors @ x
    return float(np.sum(np.logaddexp(0.0, a) - data.outcomes * a)
                 + 0.5 * data.prior_precision * (x @ x))


def logistic_grad_E(x, data: LogisticData) -> np.ndarray:
    """``x / s2 + sum_i y_i (sigmoid(x'y_i) - z_i)``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (data.d,):
        raise ContractError("x has the wrong dimension")
    a = data.predictors @ x
    return data.predictors.T @ (expit(a) - data.outcomes) + data.prior_precision * x


def logistic_hess_E(x, data: LogisticData) -> np.ndarray:
    """``I / s2 + sum_i y_i y_i' sigmoid'(x'y_i)``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (data.d,):
        raise ContractError("x has the wrong dimension")
    s = expit(data.predictors @ x)
    w = s * (1.0 - s)
    Y = data.predictors
    return (Y * w[:, None]).T @ Y + data.prior_precision * np.eye(data.d)


def power_iteration(A: np.ndarray, rtol: float = 1e-8, max_iter: int = 100000) -> float:
    """Largest eigenvalue of a symmetric PSD matrix."""
    d = A.shape[0]
    if not np.any(A):
        return 0.0
    v = np.ones(d) / math.sqrt(d) + 1e-3 * np.arange(d)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = A @ v
        lam_new = float(v @ w)
        norm = np.linalg.norm(w)
        if norm == 0:
            return 0.0
        v = w / norm
        if abs(lam_new - lam) <= rtol * abs(lam_new):
            return lam_new
        lam = lam_new
    return lam


def logistic_bound_constants(data: LogisticData):
    """Return ``(M, c)``.

    ``M = |sum_i y_i y_i'| / 4`` bounds the Hessian of ``U`` when ``Sigma`` is
    the inverse Hessian at the mode; ``c = (n/4) max_i |y_i|^2`` dominates the
    variation of each per-term Hessian ``Hess E^i``.
    """
    Y = data.predictors
    M = 0.25 * power_iteration(Y.T @ Y)
    c = 0.25 * data.n * float(np.max(np.sum(Y * Y, axis=1)))
    return M, c


class LogisticEnergy:
    """Energy object for :class:`~boomerang.core.EnergyTarget`."""

    def __init__(self, data: LogisticData):
        self.data = data
        self.dim = data.d
        self.n_terms = data.n
        self._Y = data.predictors
        self._Yt = np.ascontiguousarray(data.predictors.T)
        self._rows = [row.copy() for row in data.predictors]
        self._z = data.outcomes
        self._prec = data.prior_precision

    def energy(self, x):
        return logistic_energy(x, self.data)

    def grad(self, x):
        # hot path of the full-gradient samplers: no argument checking here
        return self._Yt @ (expit(self._Y @ x) - self._z) + self._prec * x

    def hess(self, x):
        return logistic_hess_E(x, self.data)

    def partial(self, i, x):
        a = self._Y @ x
        return float(self._Y[:, i] @ (expit(a) - self._z)) + self._prec * x[i]

    def term_grad(self, i, x):
        y = self._rows[i]
        return (self.n_terms * (_sigmoid(float(y @ x)) - self._z[i])) * y + self._prec * x

    def term_grads(self, x):
        a = self._Y @ x
        return self.n_terms * (expit(a) - self._z)[:, None] * self._Y + self._prec * x[None, :]

    def term_hess(self, i, x):
        y = self._rows[i]
        s = _sigmoid(float(y @ x))
        return self.n_terms * s * (1 - s) * np.outer(y, y) + self._prec * np.eye(self.dim)

    def term_hvp(self, i, x, w):
        y = self._rows[i]
        s = _sigmoid(float(y @ x))
        return (self.n_terms * s * (1 - s) * float(y @ w)) * y + self._prec * w

    def logistic_arrays(self):
        """``(Y, z, prior precision)`` as contiguous float arrays for compiled loops."""
        return (np.ascontiguousarray(self._Y, dtype=float),
                np.ascontiguousarray(self._z, dtype=float), float(self._prec))

    def glm_structure(self):
        """Per-term energies ``n l(y_i'x) + prior`` with ``l'(a) = sigmoid(a) - z_i``.

        Returns:
            ``(design, mean, mean_vec, slope_vec)``: the predictor matrix, the
            scalar inverse link, its vectorised form and its derivative.
        """
        return self._Y, _sigmoid, expit, lambda a: expit(a) * (1.0 - expit(a))

    def hessian_range(self):
        Y = self._Y
        lo = self._prec * np.eye(self.dim)
        return lo, lo + 0.25 * (Y.T @ Y)

    def hessian_entry_range(self):
        Y = self._Y
        prod = Y[:, :, None] * Y[:, None, :]
        base = self._prec * np.eye(self.dim)
        lo = base + 0.25 * np.minimum(prod, 0).sum(axis=0)
        hi = base + 0.25 * np.maximum(prod, 0).sum(axis=0)
        return lo, hi

    def term_hessian_scalar_range(self):
        """Scalars ``lo, hi`` with ``lo I <= Hess E^i(y) <= hi I`` for all ``i, y``."""
        _, c = logistic_bound_constants(self.data)
        return self._prec, self._prec + c

    def term_hessian_variation(self):
        lo, hi = self.term_hessian_scalar_range()
        return hi - lo


def generate_logistic_data(n: int, d: int, rng, scale_predictors: bool = False,
                           prior_variance: float = math.inf):
    """Simulate a logistic regression data set from the model.

    Predictors are i.i.d. standard normal (divided by ``sqrt(d)`` when
    ``scale_predictors``), the true parameter is standard normal and outcomes
    are Bernoulli with the logistic success probability.

    Returns:
        ``(data, true_parameter)``.
    """
    x_true = rng.standard_normal(d)
    Y = rng.standard_normal((n, d))
    if scale_predictors:
        Y /= math.sqrt(d)
    p = expit(Y @ x_true)
    z = (rng.random(n) < p).astype(float)
    return LogisticData(Y, z, prior_variance), x_true


def save_logistic_csv(path, data: LogisticData):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"y{j}" for j in range(data.d)] + ["z"])
        for row, z in zip(data.predictors, data.outcomes):
            writer.writerow([repr(float(v)) for v in row] + [int(z)])


def load_logistic_csv(path, prior_variance: float = math.inf) -> LogisticData:
    """Read predictors and a ``z`` outcome column from a CSV with a header."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    header, body = rows[0], rows[1:]
    if "z" not in header:
        raise ContractError(f"{path}: no outcome column named 'z'")
    zi = header.index("z")
    arr = np.array([[float(v) for v in r] for r in body])
    pred = np.delete(arr, zi, axis=1)
    return LogisticData(pred, arr[:, zi], prior_variance)
