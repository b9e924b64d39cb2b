"""Gauss-Legendre quadrature on split smooth segments.

All integrals in the package go through two entry points: `integrate`,
an adaptive driver for scalar or vector valued integrands, and
`segment_rule`, which builds a fixed node set for callers that need the
nodes themselves (the knot optimizer evaluates several integrands on one
node set).
"""

from __future__ import annotations

import numpy as np
from numpy.polynomial.legendre import leggauss

ORDER = 32
RTOL = 1e-12

_X, _W = leggauss(ORDER)


class QuadratureError(RuntimeError):
    """Raised when adaptive refinement fails to meet the tolerance."""


def gauss_legendre(f, a, b):
    """Apply the 32-point rule to ``f`` on ``[a, b]``.

    ``f`` receives an array of nodes and returns values with the node axis
    first; trailing axes are integrated independently.
    """
    half = 0.5 * (b - a)
    x = 0.5 * (a + b) + half * _X
    y = np.asarray(f(x), dtype=float)
    return half * np.tensordot(_W, y, axes=(0, 0))


def integrate(f, breaks, rtol=RTOL, atol=1e-300, max_depth=40):
    """Integrate ``f`` over ``[breaks[0], breaks[-1]]``.

    Each interval between consecutive breakpoints is assumed smooth. A
    segment is accepted once the full-segment rule and the sum over its two
    halves agree to ``rtol`` relative to the running total; otherwise the
    halves are refined independently.
    """
    breaks = np.unique(np.asarray(breaks, dtype=float))
    if breaks.size < 2:
        return 0.0 * np.asarray(f(np.zeros(1)), dtype=float)[0]
    stack = []
    for a, b in zip(breaks[:-1], breaks[1:]):
        if b > a:
            stack.append((a, b, gauss_legendre(f, a, b), 0))
    # Global scale for the relative test: refine against the coarse total so
    # that tiny segments are not pushed to absurd relative accuracy.
    scale = np.abs(sum(s[2] for s in stack)) if stack else 0.0
    total = 0.0
    while stack:
        a, b, whole, depth = stack.pop()
        m = 0.5 * (a + b)
        left = gauss_legendre(f, a, m)
        right = gauss_legendre(f, m, b)
        halves = left + right
        err = np.max(np.abs(halves - whole))
        tol = max(rtol * np.max(np.maximum(scale, np.abs(halves))), atol)
        if err <= tol:
            total = total + halves
            continue
        if depth >= max_depth:
            raise QuadratureError(
                f"no convergence on [{a!r}, {b!r}]: error {err:.3e} > {tol:.3e}"
            )
        stack.append((a, m, left, depth + 1))
        stack.append((m, b, right, depth + 1))
    return total


def segment_rule(breaks):
    """Nodes and weights of the 32-point rule on every interval of ``breaks``.

    Each interval is split in two halves before the rule is applied, so the
    result carries 64 nodes per interval. Zero-length intervals are dropped.

    Returns
    -------
    nodes, weights : ndarray
    seg : ndarray of int
        Index of the interval (into ``breaks``) each node belongs to.
    """
    breaks = np.asarray(breaks, dtype=float)
    a = breaks[:-1]
    b = breaks[1:]
    keep = b > a
    idx = np.nonzero(keep)[0]
    a = a[keep]
    b = b[keep]
    m = 0.5 * (a + b)
    lo = np.concatenate([a, m])
    hi = np.concatenate([m, b])
    owner = np.concatenate([idx, idx])
    half = 0.5 * (hi - lo)
    nodes = (0.5 * (lo + hi))[:, None] + half[:, None] * _X[None, :]
    weights = half[:, None] * _W[None, :]
    seg = np.repeat(owner, ORDER)
    return nodes.ravel(), weights.ravel(), seg
