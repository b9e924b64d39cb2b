"""Brute-force reference implementations for tests and validation.

Nothing here calls into the production numerics (kernel evaluation,
quadrature, projection, closure, accumulation). Each oracle recomputes its
answer from the defining formulas with plain sampling, dense least squares
or unbounded Python integers, trading speed for transparency.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from math import comb

import numpy as np
from scipy.integrate import simpson
from scipy.optimize import minimize_scalar


def kernel_values(kernel, r):
    """``w(r)`` straight from the kernel's piece table."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    for (lo, hi), coeffs in kernel.pieces:
        sel = (r >= lo) & (r < hi)
        out[sel] = np.polyval(list(reversed(coeffs)), r[sel])
    return out


def exact_field(particles, ray, t, kernel):
    """``sum_i mu_i alpha_i / (rho_i zeta_i^3) w(|x(t) - chi_i| / zeta_i)``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    x = ray.base[None, :] + t[:, None] * ray.direction[None, :]
    out = np.zeros_like(t)
    for p in particles:
        r = np.sqrt(np.sum((x - p.position[None, :]) ** 2, axis=1)) / p.h
        out += p.mass * p.value / (p.density * p.h**3) * kernel_values(kernel, r)
    return out


@dataclass
class DenseRayField:
    t: np.ndarray
    values: np.ndarray
    h: float


def dense_ray_field(particles, ray, kernel, t0, t1, h):
    n = max(2, int(math.ceil((t1 - t0) / h)))
    if n % 2:
        n += 1
    t = np.linspace(t0, t1, n + 1)
    return DenseRayField(t, exact_field(particles, ray, t, kernel), (t1 - t0) / n)


def l2_error_dense(f_approx, f_exact, interval, h):
    """Composite Simpson estimate of ``||f_approx - f_exact||_2`` on ``interval``."""
    if not h > 0:
        raise ValueError("step must be positive")
    a, b = interval
    n = max(2, int(math.ceil((b - a) / h)))
    if n % 2:
        n += 1
    t = np.linspace(a, b, n + 1)
    d = np.asarray(f_approx(t), dtype=float) - np.asarray(f_exact(t), dtype=float)
    return math.sqrt(max(simpson(d * d, x=t), 0.0))


def section_samples(kernel, lam, t):
    return kernel_values(kernel, np.sqrt(lam * lam + np.asarray(t, dtype=float) ** 2))


def basis_samples(knots, K, D, t):
    """Columns ``1 - ((|t| - theta_{k-1}) / h_k)^d`` evaluated pointwise."""
    t = np.abs(np.asarray(t, dtype=float))
    knots = np.asarray(knots, dtype=float)
    lefts = np.concatenate([[0.0], knots[:-1]])
    cols = []
    for k in range(1, len(knots) + 1):
        for d in range(1, D + 1):
            if K % 2 == 1 and k == 1 and d % 2 == 1:
                continue
            lo, hi = lefts[k - 1], knots[k - 1]
            c = np.where(t < lo, 1.0, np.where(t < hi, 1.0 - ((t - lo) / (hi - lo)) ** d, 0.0))
            cols.append(c)
    return np.array(cols).T


def dense_fit(kernel, lam, knots, K, D, n=20001):
    """Least-squares fit on a dense Simpson grid over ``[0, T]``.

    Returns the L2 error over the whole line (twice the half line) and the
    fitted coefficients.
    """
    end = math.sqrt(max(kernel.q**2 - lam**2, 0.0))
    T = max(end, float(np.max(knots)))
    if n % 2 == 0:
        n += 1
    t = np.linspace(0.0, T, n)
    w = np.full(n, 1.0)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    w *= (t[1] - t[0]) / 3.0
    A = basis_samples(knots, K, D, t)
    y = section_samples(kernel, lam, t)
    sw = np.sqrt(2.0 * w)
    if A.shape[1] == 0:
        return math.sqrt(float(np.sum(2.0 * w * y * y))), np.zeros(0)
    c, *_ = np.linalg.lstsq(A * sw[:, None], y * sw, rcond=None)
    r = y - A @ c
    return math.sqrt(float(np.sum(2.0 * w * r * r))), c


def grid_search_knots(kernel, lam, K, D, n_grid=400, n=4001):
    """Best knots on a uniform grid of ``(0, q]`` (sorted tuples for M > 1)."""
    M = (K + 1) // 2
    grid = kernel.q * np.arange(1, n_grid + 1) / n_grid
    best = (math.inf, None)
    for combo in itertools.combinations(grid, M):
        err, _ = dense_fit(kernel, lam, combo, K, D, n)
        if err < best[0]:
            best = (err, np.array(combo))
    return best[1], best[0]


def golden_single_coefficient(kernel, lam, theta, n=20001):
    """Error of the one-dimensional space ``c * (1 - |t|/theta)``, minimized
    over ``c`` by golden-section search."""
    end = math.sqrt(max(kernel.q**2 - lam**2, 0.0))
    T = max(end, theta)
    if n % 2 == 0:
        n += 1
    t = np.linspace(0.0, T, n)
    y = section_samples(kernel, lam, t)
    hat = np.clip(1.0 - t / theta, 0.0, None)

    def err(c):
        return math.sqrt(2.0 * max(simpson((y - c * hat) ** 2, x=t), 0.0))

    res = minimize_scalar(err, bracket=(0.0, 1.0), method="golden", tol=1e-12)
    return res.fun, res.x


def bigint_close(t0, offsets, half, K):
    """Quantized knots of one particle in unbounded integers.

    Implements the closure equations directly: mirrored coefficients
    ``b_{-k,d} = (-1)^(d+1) b_{kd}``; for even K the middle knot
    ``b_0d = -2 sum_{k<0} sum_{j>=d} C(j,d) b_kj (t_0 - t_k)^(j-d)`` (odd
    d); for odd K, ``b_{-1,d}`` for odd d in descending order.
    """
    M = len(offsets)
    D = len(half[0]) - 1
    pos = {k: [0] * (D + 1) for k in range(1, M + 1)}
    for k in range(1, M + 1):
        for d in range(1, D + 1):
            if K % 2 == 1 and k == 1 and d % 2 == 1:
                continue
            pos[k][d] = int(half[k - 1][d])
    t = {0: t0}
    for k in range(1, M + 1):
        t[k] = t0 + int(offsets[k - 1])
        t[-k] = 2 * t0 - t[k]
    neg = {-k: [(-1) ** (d + 1) * pos[k][d] for d in range(D + 1)] for k in range(1, M + 1)}
    mid = [0] * (D + 1)
    if K % 2 == 0:
        for d in range(1, D + 1, 2):
            mid[d] = -2 * sum(
                comb(j, d) * neg[k][j] * (t0 - t[k]) ** (j - d) for k in range(-M, 0) for j in range(d, D + 1)
            )
    else:
        for d in sorted(range(1, D + 1, 2), reverse=True):
            v = -sum(neg[k][d] for k in range(-M, -1))
            v -= sum(comb(j, d) * neg[k][j] * (t0 - t[k]) ** (j - d) for j in range(d + 1, D + 1) for k in range(-M, 0))
            neg[-1][d] = v
            pos[1][d] = (-1) ** (d + 1) * v
    knots = [(t[k], neg[k]) for k in range(-M, 0)]
    if K % 2 == 0:
        knots.append((t0, mid))
    knots += [(t[k], pos[k]) for k in range(1, M + 1)]
    return knots


def bigint_replay(knots):
    """Update rule over ``(t, b)`` pairs (sorted here) in unbounded integers.

    Returns the list of ``(t, coefficients)`` after each distinct position.
    """
    knots = sorted(knots, key=lambda kb: kb[0])
    out = []
    cur = None
    prev = None
    for t, b in knots:
        b = [int(v) for v in b]
        if cur is None:
            cur = b
        elif t == prev:
            cur = [x + y for x, y in zip(cur, b)]
            out.pop()
        else:
            D = len(b) - 1
            delta = t - prev
            cur = [b[d] + sum(comb(j, d) * cur[j] * delta ** (j - d) for j in range(d, D + 1)) for d in range(D + 1)]
        prev = t
        out.append((t, list(cur)))
    return out


def brute_force_footprint(particle, camera, q):
    """Every pixel whose ray passes closer than ``q h`` to the particle.

    Distance from the cross product ``|(chi - b) x v|``; returns a set of
    ``(ix, iy)``.
    """
    hits = set()
    R = q * particle.h
    for iy in range(camera.height):
        for ix in range(camera.width):
            ray = camera.ray(ix, iy)
            rel = particle.position - ray.base
            dist = float(np.linalg.norm(np.cross(rel, ray.direction)))
            if dist >= R:
                continue
            tc = float(rel @ ray.direction)
            half = math.sqrt(R * R - dist * dist)
            if tc + half > camera.near and tc - half < camera.far:
                hits.add((ix, iy))
    return hits


def field_max_dense(particles, kernel, n=64):
    """Maximum of the exact field over a regular grid covering all supports."""
    q = kernel.q
    lo = np.min([p.position - q * p.h for p in particles], axis=0)
    hi = np.max([p.position + q * p.h for p in particles], axis=0)
    axes = [np.linspace(lo[i], hi[i], n) for i in range(3)]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    f = np.zeros(len(X))
    for p in particles:
        r = np.linalg.norm(X - p.position, axis=1) / p.h
        f += p.mass * p.value / (p.density * p.h**3) * kernel_values(kernel, r)
    return float(np.max(np.abs(f)))


def march_ray(values_fn, tf, t0, t1, step, background=(0.0, 0.0, 0.0)):
    """Fine ray marcher: midpoint emission-absorption with sample spacing
    ``step`` over ``[t0, t1]``; returns the final RGB."""
    n = max(1, int(math.ceil((t1 - t0) / step)))
    ds = (t1 - t0) / n
    t = t0 + (np.arange(n) + 0.5) * ds
    v = values_fn(t)
    rgb = np.stack([np.interp(v, tf.values, tf.rgb[:, c]) for c in range(3)], axis=-1)
    a = np.interp(v, tf.values, tf.absorption)
    T = 1.0
    color = np.zeros(3)
    for i in range(n):
        color += T * rgb[i] * ds
        T *= math.exp(-a[i] * ds)
    return color + T * np.asarray(background, dtype=float)
