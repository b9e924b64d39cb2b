"""Optimal even piecewise polynomial approximations of a unit ray section.

Functions here are even, continuous, compactly supported piecewise
polynomials over positive knots ``theta_1 < ... < theta_M`` (``theta_0 = 0``).
They are stored by their local coefficients: row ``m`` holds the
coefficients of the piece on ``[theta_{m-1}, theta_m]`` in powers of
``u = (t - theta_{m-1}) / h_m`` with ``h_m = theta_m - theta_{m-1}``. With
that layout every inner product between two such functions is an exact
Hilbert-matrix contraction, and only products against the kernel need
quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from . import _backend
from .kernel import (
    ray_section_breaks,
    ray_section_eval,
    support_half_length,
)
from .quadrature import segment_rule

NEAR_SUPPORT_FRACTION = 1e-3
DEGENERACY_RATIO = 1e-10


class DegenerateKnotsError(ArithmeticError):
    pass


class OptimizationError(RuntimeError):
    """Knot optimization exhausted its budget; ``best`` holds the best result."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class ApproxConfig:
    """Approximation order ``D`` and maximum non-trivial pieces ``K``."""

    K: int
    D: int

    def __post_init__(self):
        if self.K < 1 or self.D < 1:
            raise ValueError(f"need K >= 1 and D >= 1, got K={self.K}, D={self.D}")

    @property
    def n_knots(self):
        """Number of positive knots, ``ceil(K/2)``."""
        return (self.K + 1) // 2

    @property
    def dimension(self):
        return (self.K * self.D) // 2

    @property
    def index_set(self):
        """Pairs ``(k, d)`` spanning the candidate space, lexicographic."""
        odd_k = self.K % 2 == 1
        return [
            (k, d)
            for k in range(1, self.n_knots + 1)
            for d in range(1, self.D + 1)
            if not (odd_k and k == 1 and d % 2 == 1)
        ]


class KnotVector(np.ndarray):
    """Strictly increasing positive knot positions."""

    def __new__(cls, values):
        arr = np.asarray(values, dtype=float).reshape(-1).view(cls)
        if arr.size == 0 or arr[0] <= 0 or np.any(np.diff(arr) <= 0):
            raise ValueError(f"knots must be positive and strictly increasing: {values}")
        return arr


def _hilbert(n):
    i = np.arange(n)
    return 1.0 / (i[:, None] + i[None, :] + 1.0)


class EvenPiecewise:
    """Even piecewise polynomial on ``[-theta_M, theta_M]``, zero outside."""

    def __init__(self, knots, coeffs):
        self.knots = np.asarray(knots, dtype=float)
        self.coeffs = np.asarray(coeffs, dtype=float)
        self.lefts = np.concatenate([[0.0], self.knots[:-1]])
        self.widths = self.knots - self.lefts

    @property
    def degree(self):
        return self.coeffs.shape[1] - 1

    def __call__(self, t):
        t = np.abs(np.asarray(t, dtype=float))
        m = np.searchsorted(self.knots, t, side="left")
        out = np.zeros_like(t)
        inside = m < self.knots.size
        if np.any(inside):
            mm = m[inside]
            u = (t[inside] - self.lefts[mm]) / self.widths[mm]
            c = self.coeffs[mm]
            acc = np.zeros_like(u)
            for j in range(c.shape[1] - 1, -1, -1):
                acc = acc * u + c[:, j]
            out[inside] = acc
        return out

    def __add__(self, other):
        return EvenPiecewise(self.knots, self.coeffs + other.coeffs)

    def __sub__(self, other):
        return EvenPiecewise(self.knots, self.coeffs - other.coeffs)

    def scale(self, c):
        return EvenPiecewise(self.knots, c * self.coeffs)

    def inner(self, other):
        """Exact L2 inner product over the whole real line."""
        H = _hilbert(self.coeffs.shape[1])
        return 2.0 * float(np.einsum("m,ma,ab,mb->", self.widths, self.coeffs, H, other.coeffs))

    def norm(self):
        return math.sqrt(max(self.inner(self), 0.0))

    def t_coeffs(self):
        """Coefficients in powers of ``(t - theta_{m-1})`` per positive piece."""
        d = np.arange(self.coeffs.shape[1])
        return self.coeffs / self.widths[:, None] ** d[None, :]


@dataclass(frozen=True)
class BasisFunction:
    index: tuple
    function: EvenPiecewise

    def __call__(self, t):
        return self.function(t)


def _basis_coeffs(M, D, k, d):
    c = np.zeros((M, D + 1))
    c[: k - 1, 0] = 1.0
    c[k - 1, 0] = 1.0
    c[k - 1, d] -= 1.0
    return c


def nonorthogonal_basis(knots, cfg):
    """The functions ``1 - ((|t| - theta_{k-1}) / (theta_k - theta_{k-1}))^d``
    (1 inside ``theta_{k-1}``, 0 beyond ``theta_k``) for ``(k, d)`` in the
    index set, in lexicographic order."""
    knots = KnotVector(knots)
    if knots.size != cfg.n_knots:
        raise ValueError(f"expected {cfg.n_knots} knots, got {knots.size}")
    M = cfg.n_knots
    return [
        BasisFunction((k, d), EvenPiecewise(knots, _basis_coeffs(M, cfg.D, k, d)))
        for k, d in cfg.index_set
    ]


def _gram_metric(knots, n_coeff):
    """Block-diagonal matrix P with ``<f, g> = vec(f) @ P @ vec(g)``."""
    lefts = np.concatenate([[0.0], knots[:-1]])
    widths = knots - lefts
    return 2.0 * np.kron(np.diag(widths), _hilbert(n_coeff))


def _gram_schmidt_vectors(V, P):
    out = np.array(V, dtype=float, copy=True)
    for i in range(out.shape[0]):
        n0 = math.sqrt(max(out[i] @ P @ out[i], 0.0))
        # Modified Gram-Schmidt: the same span and the same vectors as the
        # classical recursion in exact arithmetic, with better rounding.
        for j in range(i):
            out[i] -= (out[i] @ P @ out[j]) / (out[j] @ P @ out[j]) * out[j]
        n1 = math.sqrt(max(out[i] @ P @ out[i], 0.0))
        if not n1 > DEGENERACY_RATIO * n0:
            raise DegenerateKnotsError(f"basis element {i} collapsed (norm {n1:.3e} of {n0:.3e})")
    return out


def gram_schmidt(basis):
    """Orthogonalize basis functions in the given (lexicographic) order."""
    if not basis:
        return []
    f0 = basis[0].function
    shape = f0.coeffs.shape
    V = np.array([b.function.coeffs.ravel() for b in basis])
    W = _gram_schmidt_vectors(V, _gram_metric(f0.knots, shape[1]))
    return [
        BasisFunction(b.index, EvenPiecewise(f0.knots, w.reshape(shape)))
        for b, w in zip(basis, W)
    ]


@dataclass
class FixedKnotSolution:
    """Orthogonal projection of a ray section onto the candidate space."""

    lam: float
    knots: np.ndarray
    projections: np.ndarray
    approximation: EvenPiecewise
    error: float
    target_norm: float


def section_norm(kernel, lam):
    """``||B_lam||_2`` over the whole line."""
    end = support_half_length(kernel, lam)
    if end <= 0.0:
        return 0.0
    # The fixed split rule is exact to rounding on these smooth pieces. The
    # adaptive driver would chase a relative tolerance that cancellation in
    # the kernel polynomial makes unreachable as lam approaches q.
    t, w, _ = segment_rule(ray_section_breaks(kernel, lam))
    sq = float(np.sum(w * ray_section_eval(kernel, lam, t) ** 2))
    return math.sqrt(2.0 * max(sq, 0.0))


class _Section:
    """Cached per-distance data for repeated projections at one ``lam``."""

    def __init__(self, kernel, lam):
        self.kernel = kernel
        self.lam = float(lam)
        self.end = support_half_length(kernel, lam)
        self.breaks = ray_section_breaks(kernel, lam)
        self.norm = section_norm(kernel, lam)
        self.negligible = lam >= kernel.q * (1.0 - NEAR_SUPPORT_FRACTION)


def _project(section, knots, cfg):
    knots = np.asarray(knots, dtype=float)
    M, n = knots.size, cfg.D + 1
    zero = EvenPiecewise(knots, np.zeros((M, n)))
    if section.negligible or cfg.dimension == 0 or section.end <= 0.0:
        return FixedKnotSolution(section.lam, knots, np.zeros(cfg.dimension), zero, section.norm, section.norm)

    top = max(knots[-1], section.end)
    breaks = np.unique(np.concatenate([section.breaks, knots, [top]]))
    t, w, _ = segment_rule(breaks)
    B = ray_section_eval(section.kernel, section.lam, t)

    lefts = np.concatenate([[0.0], knots[:-1]])
    widths = knots - lefts
    m = np.searchsorted(knots, t, side="left")
    inside = m < M
    mi = np.minimum(m, M - 1)
    u = np.where(inside, (t - lefts[mi]) / widths[mi], 0.0)
    powers = u[:, None] ** np.arange(n)[None, :]
    # Moments mu[m, a] = int over piece m of u^a B dt (one side only).
    wB = np.where(inside, w * B, 0.0)
    mu = np.zeros((M, n))
    np.add.at(mu, mi[inside], wB[inside, None] * powers[inside])

    V = np.array([_basis_coeffs(M, cfg.D, k, d).ravel() for k, d in cfg.index_set])
    P = _gram_metric(knots, n)
    A = _gram_schmidt_vectors(V, P)
    num = 2.0 * (A @ mu.ravel())
    den = np.einsum("ij,jk,ik->i", A, P, A)
    proj = num / den
    coeffs = (proj @ A).reshape(M, n)

    S = np.where(inside, np.einsum("ia,ia->i", powers, coeffs[mi]), 0.0)
    err2 = 2.0 * float(np.sum(w * (B - S) ** 2))
    return FixedKnotSolution(
        section.lam, knots, proj, EvenPiecewise(knots, coeffs), math.sqrt(max(err2, 0.0)), section.norm
    )


def project_fixed_knots(kernel, lam, knots, cfg):
    """Best L2 approximation of the unit ray section for fixed knots.

    Returns the projection coefficients onto the orthogonalized basis, the
    resulting even piecewise polynomial, and its L2 error. For ``lam`` within
    ``1e-3 q`` of the support bound the approximation is the zero function.
    """
    if lam < 0:
        raise ValueError("ray distance must be non-negative")
    knots = KnotVector(knots)
    return _project(_Section(kernel, lam), knots, cfg)


def equidistant_knots(kernel, lam, cfg):
    end = support_half_length(kernel, lam)
    if end <= 0:
        end = kernel.q
    M = cfg.n_knots
    return KnotVector(end * np.arange(1, M + 1) / M)


def _to_gaps(knots):
    return np.log(np.diff(np.concatenate([[0.0], knots])))


def _from_gaps(u):
    return np.cumsum(np.exp(u))


def _error_function(section, cfg, backend=None):
    """Fixed-knot error as a function of the knots, on the chosen backend.

    Raises `DegenerateKnotsError` like `_project`.
    """
    accel = _backend.resolve(backend)
    if accel is None:
        return lambda knots: _project(section, knots, cfg).error
    kernel = section.kernel
    kb = np.ascontiguousarray(kernel._bounds)
    kc = np.ascontiguousarray(kernel._coeffs)
    breaks = np.ascontiguousarray(section.breaks)
    ks = np.array([k for k, _ in cfg.index_set], dtype=np.int_)
    ds = np.array([d for _, d in cfg.index_set], dtype=np.int_)

    def error(knots):
        e = accel.fixed_knot_error(kb, kc, section.lam, breaks, np.ascontiguousarray(knots, dtype=float), ks, ds, cfg.D)
        if e < 0:
            raise DegenerateKnotsError(f"degenerate basis for knots {knots}")
        return e

    return error


def optimize_knots(
    kernel,
    lam,
    cfg,
    warm_start=None,
    restarts=8,
    rng=None,
    fatol=1e-12,
    maxiter=4000,
    backend=None,
    n_random=None,
    warm_step=0.05,
    xatol=1e-10,
):
    """Minimize the fixed-knot error over the knot positions.

    The knots are parametrized by the logarithms of their gaps, so every
    simplex vertex is strictly ordered and positive. Without a warm start the
    search runs from the equidistant knots plus ``restarts - 1`` random sorted
    starts; with one it runs from the warm start plus ``n_random`` (default
    two) random starts. ``warm_start`` may also be a 2-D array holding several
    warm starts. Random and equidistant starts use an initial simplex of 0.3
    in log-gap units, warm starts the narrower ``warm_step``.

    Returns
    -------
    knots : KnotVector
    solution : FixedKnotSolution
    """
    if not 0 <= lam < kernel.q:
        raise ValueError(f"ray distance {lam} outside [0, q)")
    rng = np.random.default_rng(rng)
    section = _Section(kernel, lam)
    M = cfg.n_knots
    if section.negligible or cfg.dimension == 0:
        knots = equidistant_knots(kernel, lam, cfg)
        return knots, _project(section, knots, cfg)

    span = max(section.end, 1e-6)
    starts = []
    if warm_start is not None:
        starts.extend((w, warm_step) for w in np.atleast_2d(np.asarray(warm_start, dtype=float)))
        n_random = 2 if n_random is None else n_random
    else:
        starts.append((np.asarray(equidistant_knots(kernel, lam, cfg)), 0.3))
        n_random = max(restarts - 1, 0) if n_random is None else n_random
    for _ in range(n_random):
        starts.append((np.sort(rng.uniform(0.05, 1.1, size=M)) * span, 0.3))

    error = _error_function(section, cfg, backend)

    q = kernel.q
    penalty = section.norm * 2.0

    def objective(u):
        gaps = np.exp(u)
        knots = np.cumsum(gaps)
        if knots[-1] > q or not gaps.min() > 0:
            return penalty
        try:
            return error(knots)
        except DegenerateKnotsError:
            return penalty

    best = None
    n_fail = 0
    for start, step in starts:
        start = np.clip(start, 1e-6, kernel.q)
        start = np.maximum.accumulate(start + 1e-9 * np.arange(M))
        u0 = _to_gaps(start)
        simplex = np.vstack([u0] + [u0 + step * e for e in np.eye(M)])
        res = minimize(
            objective,
            u0,
            method="Nelder-Mead",
            options={"initial_simplex": simplex, "fatol": fatol, "xatol": xatol, "maxiter": maxiter},
        )
        if not res.success:
            n_fail += 1
        if best is None or res.fun < best.fun:
            best = res
    knots = KnotVector(_from_gaps(best.x))
    solution = _project(section, knots, cfg)
    if n_fail == len(starts):
        raise OptimizationError(f"knot optimization did not converge at lam={lam}", best=(knots, solution))
    return knots, solution
