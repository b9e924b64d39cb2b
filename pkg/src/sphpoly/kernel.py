"""SPH kernels as piecewise polynomials in the radius.

A kernel is a radially symmetric weight ``w(r)`` with compact support
``[0, q]``. Each particle of smoothing radius ``zeta`` contributes
``mu*alpha/(rho*zeta**3) * w(|x - chi| / zeta)`` to the field.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .quadrature import integrate

CONTINUITY_TOL = 1e-12


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class PiecewisePolynomialKernel:
    """Kernel ``w(r)`` defined piece by piece on ``[0, q]``.

    Parameters
    ----------
    pieces : sequence of ((r_lo, r_hi), coefficients)
        Coefficients are ascending powers of ``r`` (not of ``r - r_lo``).
    q : float
        Support bound; ``w(r) = 0`` for ``r >= q``.
    kernel_id : str
        Short tag, at most 16 bytes when encoded (it is stored in LUT headers).
    """

    pieces: tuple
    q: float
    kernel_id: str = "custom"
    _bounds: np.ndarray = field(init=False, repr=False, compare=False)
    _coeffs: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        pieces = tuple(
            ((float(lo), float(hi)), tuple(float(c) for c in coeffs))
            for (lo, hi), coeffs in self.pieces
        )
        object.__setattr__(self, "pieces", pieces)
        object.__setattr__(self, "q", float(self.q))
        if len(self.kernel_id.encode()) > 16:
            raise KernelError("kernel_id must fit in 16 bytes")
        if not pieces or self.q <= 0:
            raise KernelError("kernel needs at least one piece and q > 0")
        if pieces[0][0][0] != 0.0 or pieces[-1][0][1] != self.q:
            raise KernelError("pieces must tile [0, q]")
        for ((_, hi), _), ((lo, _), _) in zip(pieces[:-1], pieces[1:]):
            if hi != lo:
                raise KernelError(f"gap or overlap at r={hi} / r={lo}")
        for (lo, hi), _ in pieces:
            if not hi > lo:
                raise KernelError(f"empty piece [{lo}, {hi}]")
        width = max(len(c) for _, c in pieces)
        coeffs = np.zeros((len(pieces), width))
        for i, (_, c) in enumerate(pieces):
            coeffs[i, : len(c)] = c
        bounds = np.array([lo for (lo, _), _ in pieces] + [self.q])
        object.__setattr__(self, "_bounds", bounds)
        object.__setattr__(self, "_coeffs", coeffs)
        for i in range(1, len(pieces)):
            r = bounds[i]
            left = np.polynomial.polynomial.polyval(r, coeffs[i - 1])
            right = np.polynomial.polynomial.polyval(r, coeffs[i])
            if abs(left - right) > CONTINUITY_TOL:
                raise KernelError(f"kernel discontinuous at r={r}: {left} vs {right}")

    @property
    def breakpoints(self):
        """Piece boundaries including 0 and q."""
        return self._bounds.copy()

    @property
    def degree(self):
        return self._coeffs.shape[1] - 1

    def __call__(self, r):
        return kernel_eval(self, r)

    def derivative(self, r):
        """``dw/dr``, zero outside the support."""
        r = np.asarray(r, dtype=float)
        dc = self._coeffs[:, 1:] * np.arange(1, self._coeffs.shape[1])
        return _piecewise(self._bounds, dc, r)

    def to_dict(self):
        return {
            "kernel_id": self.kernel_id,
            "q": self.q,
            "pieces": [
                {"interval": [lo, hi], "coefficients": list(c)}
                for (lo, hi), c in self.pieces
            ],
        }

    @classmethod
    def from_dict(cls, data):
        pieces = [(tuple(p["interval"]), p["coefficients"]) for p in data["pieces"]]
        return cls(pieces=pieces, q=data["q"], kernel_id=data.get("kernel_id", "custom"))


def _piecewise(bounds, coeffs, r):
    out = np.zeros_like(r, dtype=float)
    idx = np.searchsorted(bounds, r, side="right") - 1
    inside = (idx >= 0) & (idx < coeffs.shape[0]) & (r < bounds[-1])
    if np.any(inside):
        rr = r[inside]
        cc = coeffs[idx[inside]]
        acc = np.zeros_like(rr)
        for j in range(cc.shape[1] - 1, -1, -1):
            acc = acc * rr + cc[:, j]
        out[inside] = acc
    return out


def cubic_spline_kernel():
    """The cubic B-spline kernel with the ``1/(4 pi)`` normalization, ``q = 2``.

    Inner piece ``(2-r)^3 - 4(1-r)^3 = 4 - 6r^2 + 3r^3``, outer piece
    ``(2-r)^3 = 8 - 12r + 6r^2 - r^3``.
    """
    c = 1.0 / (4.0 * math.pi)
    return PiecewisePolynomialKernel(
        pieces=(
            ((0.0, 1.0), (4 * c, 0.0, -6 * c, 3 * c)),
            ((1.0, 2.0), (8 * c, -12 * c, 6 * c, -c)),
        ),
        q=2.0,
        kernel_id="cubic",
    )


BUILTIN_KERNELS = {"cubic": cubic_spline_kernel}


def load_kernel(spec):
    """Resolve a builtin id (``"cubic"``) or a path to a kernel JSON file."""
    if isinstance(spec, PiecewisePolynomialKernel):
        return spec
    if spec in BUILTIN_KERNELS:
        return BUILTIN_KERNELS[spec]()
    path = Path(spec)
    if not path.exists():
        raise KernelError(f"unknown kernel {spec!r}")
    return PiecewisePolynomialKernel.from_dict(json.loads(path.read_text()))


def save_kernel(kernel, path):
    Path(path).write_text(json.dumps(kernel.to_dict(), indent=2))


def kernel_eval(kernel, r):
    """Evaluate ``w(r)``; exactly 0 for ``r >= q``.

    Accepts scalars or arrays; returns the same shape.
    """
    arr = np.asarray(r, dtype=float)
    if np.any(arr < 0):
        raise ValueError("kernel radius must be non-negative")
    out = _piecewise(kernel._bounds, kernel._coeffs, np.atleast_1d(arr))
    return float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)


def ray_section_eval(kernel, lam, t):
    """Unit particle contribution along a ray at distance ``lam``.

    ``B(t) = w(sqrt(lam^2 + t^2))``; computed from ``|t|`` so it is exactly
    even, and exactly zero once ``lam^2 + t^2 >= q^2``.
    """
    if lam < 0:
        raise ValueError("ray distance must be non-negative")
    t = np.abs(np.asarray(t, dtype=float))
    r2 = lam * lam + t * t
    r = np.sqrt(r2)
    out = _piecewise(kernel._bounds, kernel._coeffs, np.atleast_1d(r))
    out[np.atleast_1d(r2) >= kernel.q * kernel.q] = 0.0
    return float(out[0]) if t.ndim == 0 else out.reshape(t.shape)


def ray_section_derivative(kernel, lam, t):
    """``dB/dt = w'(r) * t / r`` with ``r = sqrt(lam^2 + t^2)``."""
    t = np.asarray(t, dtype=float)
    r = np.sqrt(lam * lam + t * t)
    dw = kernel.derivative(np.atleast_1d(r)).reshape(r.shape)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(r > 0, t / np.where(r > 0, r, 1.0), 0.0)
    return dw * ratio


def support_half_length(kernel, lam):
    """Half-length ``sqrt(q^2 - lam^2)`` of the ray section's support."""
    return math.sqrt(max(kernel.q * kernel.q - lam * lam, 0.0))


def ray_section_breaks(kernel, lam):
    """Positive ``t`` where ``sqrt(lam^2 + t^2)`` crosses a kernel breakpoint.

    Always starts at 0 and ends at the support half-length. When ``lam`` is
    small but positive, extra geometric split points ``lam * 2**j`` keep the
    branch point of ``sqrt(lam^2 + t^2)`` at ``t = i*lam`` well separated from
    every segment.
    """
    end = support_half_length(kernel, lam)
    pts = [0.0, end]
    for rb in kernel.breakpoints[1:-1]:
        if rb > lam:
            pts.append(math.sqrt(rb * rb - lam * lam))
    if 0.0 < lam:
        g = lam
        while g < end:
            pts.append(g)
            g *= 2.0
    return np.unique(np.array(pts))


@dataclass(frozen=True)
class KernelConstants:
    kappa: float
    kappa_prime: float


def kernel_constants(kernel):
    """L2 norm ``kappa`` of the unit contribution and the positional constant
    ``kappa_prime``.

    ``kappa^2 = 4 pi int_0^q (r w(r))^2 dr``.
    ``kappa_prime^2 = int_0^q lam int_R (dB_lam/dt)^2 dt dlam``, evaluated in
    polar coordinates ``lam = r cos(psi)``, ``t = r sin(psi)`` so the radial
    integral splits exactly at the kernel breakpoints and the angular one is
    smooth.
    """
    bounds = kernel.breakpoints
    k2 = 4.0 * math.pi * integrate(lambda r: (r * kernel_eval(kernel, r)) ** 2, bounds)

    ang = integrate(lambda p: np.cos(p) * np.sin(p) ** 2, [-0.5 * math.pi, 0.0, 0.5 * math.pi])
    # Jacobian r, times lam = r cos(psi), times (w'(r) sin(psi))^2.
    kp2 = ang * integrate(lambda r: (r * kernel.derivative(r)) ** 2, bounds)
    return KernelConstants(kappa=math.sqrt(max(k2, 0.0)), kappa_prime=math.sqrt(max(kp2, 0.0)))
