"""Quantum values, the quantization error estimate, and quantized knots.

Knot positions are integer multiples of a length quantum ``tau`` and the
order-``d`` difference coefficients integer multiples of ``sigma / tau**d``.
With that choice the update rule only ever multiplies and adds integers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .intarith import CheckedOps, IntegerOverflowError, close_shifted_even, int_max
from .kernel import kernel_eval
from .lut import lookup

DEFAULT_CLUSTERING = 16.0


class QuantaError(ValueError):
    pass


@dataclass(frozen=True)
class QuantaConfig:
    """Length quantum ``tau`` and value quantum ``sigma`` for one render.

    ``tau_normalized`` and ``sigma_normalized`` are the arguments the
    quantization error estimate was minimized at (``tau / zeta_r`` and
    ``sigma / phi_repr``); they are kept for reporting only.
    """

    tau: float
    sigma: float
    int_width: int = 64
    D: int = 3
    tau_normalized: float = float("nan")
    sigma_normalized: float = float("nan")
    Q_D: float = float("nan")

    def __post_init__(self):
        if not (self.tau > 0 and self.sigma > 0):
            raise QuantaError("tau and sigma must be positive")
        int_max(self.int_width)

    @property
    def INT_MAX(self):
        return int_max(self.int_width)

    def sigma_d(self, d):
        """Quantum of the order-``d`` coefficients, ``sigma / tau**d``."""
        return self.sigma / self.tau**d

    def to_dict(self):
        return {
            "tau": self.tau,
            "sigma": self.sigma,
            "int_width": self.int_width,
            "INT_MAX": self.INT_MAX,
            "D": self.D,
            "tau_normalized": self.tau_normalized,
            "sigma_normalized": self.sigma_normalized,
            "Q_D": self.Q_D,
        }


@dataclass(frozen=True)
class Particle:
    """One SPH particle: position, mass, density, smoothing radius, attribute."""

    position: np.ndarray
    mass: float
    density: float
    h: float
    value: float

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        if not self.h > 0:
            raise ValueError(f"smoothing radius must be positive, got {self.h}")
        if not self.density > 0:
            raise ValueError(f"density must be positive, got {self.density}")

    @property
    def phi(self):
        """Kernel factor ``mu alpha / (rho zeta^3)``."""
        return self.mass * self.value / (self.density * self.h**3)


@dataclass(frozen=True)
class DatasetStats:
    a_max: float
    mass: float
    density: float
    h: float
    value: float
    clustering: float = DEFAULT_CLUSTERING
    source: str = "bound"

    def __post_init__(self):
        if not self.a_max > 0:
            raise QuantaError("a_max must be positive")
        if not (self.h > 0 and self.density > 0):
            raise QuantaError("representative h and density must be positive")

    @property
    def phi_repr(self):
        return self.mass * self.value / (self.density * self.h**3)

    def variance(self, kernel):
        """Data variance factor: ``a_max`` over the representative particle's
        peak contribution ``phi_repr * w(0)``."""
        return self.a_max / (abs(self.phi_repr) * kernel_eval(kernel, 0.0))

    def to_dict(self):
        return {
            "a_max": self.a_max,
            "phi_repr": self.phi_repr,
            "mass": self.mass,
            "density": self.density,
            "h": self.h,
            "value": self.value,
            "clustering": self.clustering,
            "source": self.source,
        }


@dataclass(frozen=True)
class QuantizedKnot:
    t_bar: int
    b_bar: tuple
    ray_id: object = None
    particle: object = field(default=None, compare=False)


def _degree(cfg):
    return cfg if isinstance(cfg, int) else cfg.D


def _terms(D, q):
    d = np.arange(D + 1)
    return d, 2.0 * q ** (2 * d + 3) / ((2 * d + 1) * (2 * d + 3))


def quantization_error(cfg, constants, q, tau, sigma):
    """Relative quantization error estimate

    Q_D = 1/(4 kappa) sqrt(kappa'^2 tau^2 + sum_{d=0}^{D} 2 q^(2d+3) / ((2d+1)(2d+3)) sigma^2 / tau^(2d))

    for normalized quanta ``tau`` and ``sigma``; ``cfg`` is an `ApproxConfig`
    or the degree ``D``.
    """
    if not (tau > 0 and sigma >= 0):
        raise QuantaError("tau must be positive and sigma non-negative")
    d, c = _terms(_degree(cfg), q)
    s = constants.kappa_prime**2 * tau**2 + float(np.sum(c * sigma**2 / tau ** (2 * d)))
    return math.sqrt(s) / (4.0 * constants.kappa)


def quantization_error_derivatives(cfg, constants, q, tau, sigma):
    """First and second derivative of ``Q_D**2`` with respect to ``tau``."""
    D = _degree(cfg)
    k2 = constants.kappa**2
    d = np.arange(1, D + 1)
    c = q ** (2 * d + 3) * sigma**2 / (4.0 * k2 * (2 * d + 3))
    first = constants.kappa_prime**2 * tau / (8.0 * k2) - float(np.sum(d * c / ((2 * d + 1) * tau ** (2 * d + 1))))
    second = constants.kappa_prime**2 / (8.0 * k2) + float(np.sum(d * c / tau ** (2 * d + 2)))
    return first, second


def optimal_tau(cfg, constants, q, sigma):
    """Unique minimizer of ``Q_D(tau, sigma)`` over ``tau > 0``.

    ``Q_D**2`` is strictly convex in ``tau`` for ``D >= 1`` and its derivative
    changes sign exactly once, so a bracketing root finder on the derivative
    is reliable.
    """
    D = _degree(cfg)
    if D < 1:
        raise QuantaError("for D = 0 the estimate decreases towards tau -> 0; set tau explicitly")
    if not sigma > 0:
        raise QuantaError("sigma must be positive")

    def f(t):
        return quantization_error_derivatives(D, constants, q, t, sigma)[0]

    # Balance of the positional term and the highest-order value term.
    guess = (sigma / max(constants.kappa_prime, 1e-300)) ** (1.0 / (D + 1)) * q
    lo, hi = guess, guess
    while f(lo) >= 0:
        lo *= 0.5
    while f(hi) <= 0:
        hi *= 2.0
    return brentq(f, lo, hi, xtol=1e-300, rtol=1e-15, maxiter=500)


def variance_sigma(variance, int_width, kernel):
    """Normalized value quantum ``sigma / phi_repr`` for a data variance factor.

    ``sigma = a_max / INT_MAX`` with ``a_max = variance * phi_repr * w(0)``.
    """
    return variance * kernel_eval(kernel, 0.0) / int_max(int_width)


def choose_quanta(cfg, constants, q, stats, int_width=64):
    """``sigma = a_max / INT_MAX``; ``tau`` minimizes
    ``Q_D(tau / zeta_r, sigma / phi_repr)``."""
    D = _degree(cfg)
    if D < 1:
        raise QuantaError("for D = 0 the estimate decreases towards tau -> 0; set tau explicitly")
    sigma = stats.a_max / int_max(int_width)
    sigma_n = sigma / abs(stats.phi_repr)
    tau_n = optimal_tau(D, constants, q, sigma_n)
    return QuantaConfig(
        tau=tau_n * stats.h,
        sigma=sigma,
        int_width=int_width,
        D=D,
        tau_normalized=tau_n,
        sigma_normalized=sigma_n,
        Q_D=quantization_error(D, constants, q, tau_n, sigma_n),
    )


def dataset_stats(particles, lut, cfg=None, clustering=DEFAULT_CLUSTERING, variance=None, kernel=None):
    """Representative attributes (medians) and the field bound ``a_max``.

    ``a_max`` is ``clustering`` times the largest single-particle peak
    ``|phi_i| * max|S*|`` over the table. With ``variance`` given (needs
    ``kernel``) it is instead ``variance * phi_repr * w(0)``.
    """
    if len(particles) == 0:
        raise QuantaError("dataset_stats needs at least one particle")
    attrs = np.array([[p.mass, p.density, p.h, p.value] for p in particles])
    mass, density, h, value = (float(x) for x in np.median(attrs, axis=0))
    phi_repr = mass * value / (density * h**3)
    if variance is not None:
        if kernel is None:
            raise QuantaError("a variance override needs the kernel")
        a_max = variance * abs(phi_repr) * kernel_eval(kernel, 0.0)
        source = "variance"
    else:
        phi_max = max(abs(p.phi) for p in particles)
        a_max = clustering * phi_max * lut.peak
        source = "bound"
    if not a_max > 0:
        raise QuantaError("all particles have zero contribution; a_max would be 0")
    return DatasetStats(a_max, mass, density, h, value, clustering=clustering, source=source)


def _round(x):
    if not math.isfinite(x):
        raise OverflowError(f"non-finite value {x}")
    return round(x)


def quantize_particle(particle, t_chi, lam, lut, quanta, ray_id=None, particle_id=None):
    """Quantized knots of one particle on one ray.

    ``t_chi`` is the closest-point ray parameter and ``lam`` the normalized
    distance. Knots sharing a position after rounding are merged. Returns an
    empty list for ``lam >= q``.

    Raises
    ------
    IntegerOverflowError
        If a coefficient or an intermediate closure sum leaves the integer
        range; ``particle`` on the exception names the particle.
    """
    if lam >= lut.q:
        return []
    cfg = lut.cfg
    entry = lookup(lut, lam)
    tau, sigma, zeta = quanta.tau, quanta.sigma, particle.h
    ops = CheckedOps(quanta.int_width)
    who = particle_id if particle_id is not None else particle
    try:
        t0 = ops.check(_round(t_chi / tau))
        offsets = [ops.check(_round(zeta * th / tau)) for th in entry.knots]
        base = particle.mass * particle.value / (sigma * particle.density * zeta**3)
        half = [[0] * (cfg.D + 1) for _ in range(cfg.n_knots)]
        for (k, d), s in zip(cfg.index_set, entry.s_hat):
            half[k - 1][d] = ops.check(_round(base * (tau / zeta) ** d * s))
        rel, coeffs = close_shifted_even(offsets, half, cfg.K % 2 == 1, ops.add, ops.mul)
        knots = []
        for r, c in zip(rel, coeffs):
            t = ops.add(t0, r)
            if knots and knots[-1][0] == t:
                knots[-1] = (t, [ops.add(a, b) for a, b in zip(knots[-1][1], c)])
            else:
                knots.append((t, list(c)))
    except (IntegerOverflowError, OverflowError) as exc:
        raise IntegerOverflowError(
            f"particle {who!r}: quantized value exceeds the {quanta.int_width}-bit range ({exc})",
            ray_id=ray_id,
            particle=who,
        ) from exc
    return [QuantizedKnot(t, tuple(c), ray_id, who) for t, c in knots]
