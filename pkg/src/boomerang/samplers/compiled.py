"""Compiled thinning loop for logistic-regression targets.

With exact gradients every proposal costs one pass over the data. For a few
thousand observations the interpreter overhead of the generic loop is larger
than that pass, which hides how the cost grows with ``n``. The kernel here
runs consecutive rejected proposals without returning to Python and hands
control back at every point where the generic loop would do something else:
an empty random block, a refreshment, the horizon, a violation or an accepted
reflection. Random numbers are consumed in the same order as the generic loop.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

NEED_EXP, HORIZON, REFRESH, DECIDE, ACCEPT = range(5)


class ArrayStream:
    """Block-buffered ``Exp(1)`` and ``U(0, 1)`` draws the kernel can read.

    Produces the same sequence as :class:`~boomerang.samplers.streams.RandomStream`.
    """

    def __init__(self, rng: np.random.Generator, block: int = 4096):
        self.rng = rng
        self.block = block
        self.ebuf = np.empty(0)
        self.epos = 0
        self.ubuf = np.empty(0)
        self.upos = 0

    def refill_exp(self):
        self.ebuf = self.rng.standard_exponential(self.block)
        self.epos = 0

    def exp(self) -> float:
        if self.epos >= self.ebuf.shape[0]:
            self.refill_exp()
        self.epos += 1
        return float(self.ebuf[self.epos - 1])

    def unif(self) -> float:
        if self.upos >= self.ubuf.shape[0]:
            self.ubuf = self.rng.random(self.block)
            self.upos = 0
        self.upos += 1
        return float(self.ubuf[self.upos - 1])


@njit(cache=True)
def logistic_grad_U(xi, x_star, Y, z, prec, S, out):
    """``grad U`` at ``x_star + xi`` for a logistic energy relative to ``N(x_star, S^-1)``."""
    n, d = Y.shape
    for j in range(d):
        out[j] = prec * (xi[j] + x_star[j])
    for i in range(n):
        a = 0.0
        for j in range(d):
            a += Y[i, j] * (xi[j] + x_star[j])
        r = 1.0 / (1.0 + math.exp(-a)) - z[i]
        for j in range(d):
            out[j] += r * Y[i, j]
    for j in range(d):
        s = 0.0
        for k in range(d):
            s += S[j, k] * xi[k]
        out[j] -= s


@njit(cache=True)
def thin(xi, v, g, t, t_refresh, a, b, r2, horizon, affine, scale, M, m, tol,
         ebuf, epos, ubuf, upos, x_star, Y, z, prec, S, counts):
    """Run proposals until the Python driver has to act.

    ``xi``, ``v`` and ``g`` are updated in place; ``counts`` holds
    ``[proposals, bound integral]``.

    Returns:
        ``(status, t, tau, a, b, vg, epos, upos)``.
    """
    d = xi.shape[0]
    r = math.sqrt(r2)
    while True:
        if epos >= ebuf.shape[0]:
            return NEED_EXP, t, 0.0, a, b, 0.0, epos, upos
        E = ebuf[epos]
        epos += 1
        if b > 0:
            den = a + math.sqrt(a * a + 2.0 * b * E)
            tau = 2.0 * E / den if den > 0 else math.sqrt(2.0 * E) / math.sqrt(b)
        elif a > 0:
            tau = E / a
        else:
            tau = math.inf
        refresh = t_refresh < t + tau
        t_next = t_refresh if refresh else t + tau
        if t_next > horizon:
            t_next = horizon
        dt = t_next - t
        counts[1] += a * dt + 0.5 * b * dt * dt
        if dt > 0:
            c, s = math.cos(dt), math.sin(dt)
            for j in range(d):
                x0, v0 = xi[j], v[j]
                xi[j] = x0 * c + v0 * s
                v[j] = v0 * c - x0 * s
        t = t_next
        if t >= horizon:
            return HORIZON, t, tau, a, b, 0.0, epos, upos
        if refresh:
            return REFRESH, t, tau, a, b, 0.0, epos, upos
        counts[0] += 1
        logistic_grad_U(xi, x_star, Y, z, prec, S, g)
        vg = 0.0
        for j in range(d):
            vg += v[j] * g[j]
        if vg > 0.0:
            bound_now = a + b * tau
            ratio = vg / bound_now if bound_now > 0 else math.inf
            if ratio > 1.0 + tol or upos >= ubuf.shape[0]:
                return DECIDE, t, tau, a, b, vg, epos, upos
            u = ubuf[upos]
            upos += 1
            if u < ratio:
                return ACCEPT, t, tau, a, b, vg, epos, upos
        if affine:
            a = scale * max(vg, 0.0)
            b = scale * (M * r2 + m * r)
        else:
            a = scale * (0.5 * M * r2 + m * r)
            b = 0.0


_warm = False


def warm_up():
    """Compile (or load from cache) the kernels outside any timed region."""
    global _warm
    if _warm:
        return
    d = 1
    xi, v, g = np.zeros(d), np.ones(d), np.zeros(d)
    Y, z, S = np.ones((1, d)), np.zeros(1), np.eye(d)
    thin(xi, v, g, 0.0, 1.0, 1.0, 1.0, 1.0, 0.5, True, 1.0, 1.0, 1.0, 1e-9,
         np.ones(4), 0, np.ones(4), 0, np.zeros(d), Y, z, 1.0, S, np.zeros(2))
    logistic_grad_U(xi, np.zeros(d), Y, z, 1.0, S, g)
    _warm = True
