"""Compiled inner loops for the per-node updates (numba)."""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def huber_newton_terms(design, targets, beta, ridge, x):
    """Gradient, Hessian and H x - grad of the smooth-Huber regression cost at ``x``.

    Only the upper triangle is accumulated and then mirrored, so the Hessian
    is exactly symmetric.
    """
    m, n = design.shape
    grad = ridge * x
    hess = np.zeros((n, n))
    for k in range(m):
        r = targets[k]
        for a in range(n):
            r -= design[k, a] * x[a]
        ar = abs(r)
        den = ar + beta
        d1 = (r * ar + 2.0 * beta * r) / (den * den)
        d2 = 2.0 * beta * beta / (den * den * den)
        for a in range(n):
            da = design[k, a]
            grad[a] -= da * d1
            w = d2 * da
            for b in range(a, n):
                hess[a, b] += w * design[k, b]
    for a in range(n):
        hess[a, a] += ridge[a]
        for b in range(a + 1, n):
            hess[b, a] = hess[a, b]
    newton = hess @ x - grad
    return newton, hess, grad


@njit(cache=True)
def floored_solve(z, y, c):
    """Solve ``threshold(z, c) v = y`` through the eigendecomposition of symmetric ``z``."""
    n = y.shape[0]
    if n == 1:
        out = np.empty(1)
        out[0] = y[0] / max(z[0, 0], c)
        return out
    lam, q = np.linalg.eigh(z)
    w = q.T @ y
    for k in range(n):
        w[k] /= max(lam[k], c)
    return q @ w
