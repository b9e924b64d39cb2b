"""Three-sweep ray casting of quantized particle approximations.

Sweep 1 emits quantized knots for every (particle, ray) pair with the ray
inside the particle's influence sphere. Sweep 2 sorts each ray's knots by
position. Sweep 3 runs the exact integer update rule along each ray and
composites the resulting piecewise polynomial field front to back.
"""

from __future__ import annotations

import math
import time
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from math import comb

import numpy as np

from . import _backend
from .intarith import (
    IntegerOverflowError,
    UnsortedStreamError,
    accumulate_stream,
    int_range,
    update_step,
)
from .quantize import QuantizedKnot, quantize_particle

EARLY_EXIT_OPACITY = 0.999


@dataclass(frozen=True)
class Ray:
    """``x(t) = base + t * direction`` through pixel ``(ix, iy)``."""

    base: np.ndarray
    direction: np.ndarray
    pixel: tuple = (0, 0)

    def __post_init__(self):
        v = np.asarray(self.direction, dtype=float).reshape(3)
        if abs(np.linalg.norm(v) - 1.0) > 1e-12:
            raise ValueError("ray direction must be a unit vector")
        object.__setattr__(self, "base", np.asarray(self.base, dtype=float).reshape(3))
        object.__setattr__(self, "direction", v)

    def at(self, t):
        return self.base + np.multiply.outer(t, self.direction)


def _unit(v):
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("zero-length vector")
    return v / n


@dataclass(frozen=True)
class Camera:
    """Orthographic or pinhole camera.

    ``extent`` is the world-space height of the orthographic view; ``fov``
    the vertical field of view of the pinhole camera in degrees. Rays pass
    through pixel centres; pixel ``(ix, iy)`` has ``iy = 0`` at the top.
    """

    mode: str = "orthographic"
    eye: tuple = (0.0, 0.0, -10.0)
    target: tuple = (0.0, 0.0, 0.0)
    up: tuple = (0.0, 1.0, 0.0)
    width: int = 64
    height: int = 64
    extent: float = 4.0
    fov: float = 45.0
    near: float = 0.0
    far: float = 1e3

    def __post_init__(self):
        if self.mode not in ("orthographic", "pinhole"):
            raise ValueError(f"unknown camera mode {self.mode!r}")
        if self.width < 1 or self.height < 1:
            raise ValueError("camera resolution must be positive")
        if not self.far > self.near:
            raise ValueError("far clip must exceed near clip")
        if self.mode == "pinhole" and self.near < 0:
            raise ValueError("pinhole near clip must be non-negative")

    @classmethod
    def from_dict(cls, data):
        keys = cls.__dataclass_fields__
        unknown = set(data) - set(keys)
        if unknown:
            raise ValueError(f"unknown camera keys {sorted(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
        return cls(**kw)

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in self.__dict__.items()}

    @property
    def frame(self):
        """Orthonormal ``(right, up, forward)``."""
        fwd = _unit(np.subtract(self.target, self.eye))
        right = _unit(np.cross(fwd, self.up))
        up = np.cross(right, fwd)
        return right, up, fwd

    @property
    def n_rays(self):
        return self.width * self.height

    @property
    def pixel_size(self):
        if self.mode == "orthographic":
            return self.extent / self.height
        return 2.0 * math.tan(math.radians(self.fov) / 2.0) / self.height

    def _plane(self, ix, iy):
        s = self.pixel_size
        x = (np.asarray(ix) + 0.5 - self.width / 2.0) * s
        y = (self.height / 2.0 - np.asarray(iy) - 0.5) * s
        return x, y

    def rays_for(self, ix, iy):
        """Bases and unit directions for arrays of pixel indices."""
        right, up, fwd = self.frame
        x, y = self._plane(ix, iy)
        eye = np.asarray(self.eye, dtype=float)
        if self.mode == "orthographic":
            base = eye + np.multiply.outer(x, right) + np.multiply.outer(y, up)
            dirs = np.broadcast_to(fwd, base.shape).copy()
        else:
            d = fwd + np.multiply.outer(x, right) + np.multiply.outer(y, up)
            dirs = d / np.linalg.norm(d, axis=-1, keepdims=True)
            base = np.broadcast_to(eye, dirs.shape).copy()
        return base, dirs

    def ray(self, ix, iy):
        b, v = self.rays_for(ix, iy)
        return Ray(b, v, (int(ix), int(iy)))

    def ray_id(self, ix, iy):
        return int(iy) * self.width + int(ix)

    def pixel_of(self, ray_id):
        return ray_id % self.width, ray_id // self.width

    def _pixel_box(self, center, radius):
        """Conservative pixel bounding box of a sphere, or None when empty."""
        right, up, fwd = self.frame
        rel = np.asarray(center, dtype=float) - np.asarray(self.eye, dtype=float)
        cx, cy, cz = rel @ right, rel @ up, rel @ fwd
        s = self.pixel_size
        if self.mode == "orthographic":
            xs = np.array([cx - radius, cx + radius])
            ys = np.array([cy - radius, cy + radius])
        else:
            corners = np.array(
                [(cx + a, cy + b, cz + c) for a in (-radius, radius) for b in (-radius, radius) for c in (-radius, radius)]
            )
            if np.all(corners[:, 2] <= 0):
                return None
            if np.any(corners[:, 2] <= 1e-12 * max(1.0, abs(cz))):
                return 0, self.width - 1, 0, self.height - 1
            xs = corners[:, 0] / corners[:, 2]
            ys = corners[:, 1] / corners[:, 2]
        ix0 = math.floor(xs.min() / s + self.width / 2.0 - 0.5)
        ix1 = math.ceil(xs.max() / s + self.width / 2.0 - 0.5)
        iy0 = math.floor(self.height / 2.0 - ys.max() / s - 0.5)
        iy1 = math.ceil(self.height / 2.0 - ys.min() / s - 0.5)
        ix0, iy0 = max(ix0, 0), max(iy0, 0)
        ix1, iy1 = min(ix1, self.width - 1), min(iy1, self.height - 1)
        if ix0 > ix1 or iy0 > iy1:
            return None
        return ix0, ix1, iy0, iy1


def _footprint_arrays(particle, camera, q):
    """Pixel indices, normalized distances and closest-point parameters."""
    R = q * particle.h
    box = camera._pixel_box(particle.position, R)
    if box is None:
        return np.zeros(0, int), np.zeros(0, int), np.zeros(0), np.zeros(0)
    ix0, ix1, iy0, iy1 = box
    iy, ix = np.mgrid[iy0 : iy1 + 1, ix0 : ix1 + 1]
    ix, iy = ix.ravel(), iy.ravel()
    base, dirs = camera.rays_for(ix, iy)
    rel = particle.position - base
    t_chi = np.einsum("ij,ij->i", rel, dirs)
    perp = rel - t_chi[:, None] * dirs
    dist = np.linalg.norm(perp, axis=1)
    half = np.sqrt(np.maximum(R * R - dist * dist, 0.0))
    lo = camera.near if camera.mode == "orthographic" else max(camera.near, 0.0)
    keep = (dist < R) & (t_chi + half > lo) & (t_chi - half < camera.far)
    return ix[keep], iy[keep], dist[keep] / particle.h, t_chi[keep]


def particle_ray_footprint(particle, camera, q):
    """Rays passing closer than ``q * h`` to the particle centre.

    Returns a list of ``(Ray, lam, t_chi)``; empty when the influence sphere
    lies entirely outside the clip range.
    """
    ix, iy, lam, t_chi = _footprint_arrays(particle, camera, q)
    return [(camera.ray(a, b), float(l), float(t)) for a, b, l, t in zip(ix, iy, lam, t_chi)]


def sort_knots(knots):
    """Group knots by ray and sort each group stably by position.

    Returns a dict ``ray_id -> list of QuantizedKnot`` in ascending ray id.
    """
    streams = defaultdict(list)
    for k in knots:
        streams[k.ray_id].append(k)
    return {rid: sorted(streams[rid], key=lambda k: k.t_bar) for rid in sorted(streams)}


@dataclass
class RayField:
    """Accumulated integer field along one ray.

    Piece ``i`` covers ``[positions[i], positions[i+1]]`` (in length quanta)
    with coefficients ``coeffs[i]`` about ``positions[i]``; the field is 0
    before the first knot and equals the last row, which telescopes to zero,
    after the last.
    """

    positions: np.ndarray
    coeffs: np.ndarray
    quanta: object
    ray_id: object = None
    ops: int = 0

    @property
    def residual(self):
        return self.coeffs[-1] if len(self.positions) else np.zeros(self.quanta.D + 1, dtype=np.int64)

    def pieces(self):
        for i in range(len(self.positions) - 1):
            yield int(self.positions[i]), int(self.positions[i + 1]), self.coeffs[i]

    def __call__(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.zeros_like(t)
        if len(self.positions) == 0:
            return out
        tau = self.quanta.tau
        idx = np.searchsorted(self.positions.astype(float) * tau, t, side="right") - 1
        for i in np.unique(idx[idx >= 0]):
            sel = idx == i
            out[sel] = evaluate_piece(self.coeffs[i], int(self.positions[i]), self.quanta, t[sel])
        return out


class RayAccumulator:
    """Incremental form of the integer update rule for one ray.

    Holds the running coefficients ``a_0..a_D`` and the previous knot
    position. Knots must arrive in ascending position; equal positions merge.
    """

    def __init__(self, quanta, ray_id=None):
        self.quanta = quanta
        self.ray_id = ray_id
        self.lo, self.hi = int_range(quanta.int_width)
        self.D = quanta.D
        self.coeffs = [0] * (self.D + 1)
        self.t_prev = None
        self.ops = 0
        self._binom = [[comb(j, d) for d in range(self.D + 1)] for j in range(self.D + 1)]

    def push(self, t_bar, b_bar):
        t_bar = int(t_bar)
        row = [int(v) for v in b_bar]
        if len(row) != self.D + 1:
            raise ValueError(f"expected {self.D + 1} coefficients")
        if any(v < self.lo or v > self.hi for v in row):
            raise IntegerOverflowError("difference coefficient out of range", position=t_bar, ray_id=self.ray_id)
        if self.t_prev is not None and t_bar < self.t_prev:
            raise UnsortedStreamError(f"knot at {t_bar} after {self.t_prev} on ray {self.ray_id}")
        delta = 0 if self.t_prev is None else t_bar - self.t_prev
        if delta > self.hi:
            raise IntegerOverflowError(f"knot gap {delta} out of range", position=t_bar, ray_id=self.ray_id)
        ok, nxt, ops = update_step(self.coeffs, row, delta, self.lo, self.hi, self._binom)
        self.ops += ops
        if not ok:
            raise IntegerOverflowError(
                f"{self.quanta.int_width}-bit overflow on ray {self.ray_id} at t_bar={t_bar}",
                position=t_bar,
                ray_id=self.ray_id,
            )
        self.coeffs = nxt
        self.t_prev = t_bar
        return list(nxt)


def accumulate(stream, quanta, ray_id=None, backend=None):
    """Run the integer update rule along a sorted knot stream.

    ``stream`` is a sequence of `QuantizedKnot` or of ``(t_bar, b_bar)``
    pairs. Overflow raises `IntegerOverflowError` carrying the ray id and the
    knot position.
    """
    D = quanta.D
    t = [k.t_bar if isinstance(k, QuantizedKnot) else k[0] for k in stream]
    b = [k.b_bar if isinstance(k, QuantizedKnot) else k[1] for k in stream]
    if not t:
        dtype = object if quanta.int_width == 128 else np.int64
        return RayField(np.zeros(0, np.int64), np.zeros((0, D + 1), dtype=dtype), quanta, ray_id)
    try:
        acc = accumulate_stream(t, b, quanta.int_width, backend=backend)
    except IntegerOverflowError as exc:
        exc.ray_id = ray_id
        exc.args = (f"ray {ray_id}: {exc.args[0]}",)
        raise
    return RayField(acc.positions, acc.coeffs, quanta, ray_id, acc.ops)


def evaluate_piece(coeffs, t_bar, quanta, t):
    """``sum_d sigma_d a_d (t - t_bar tau)^d`` by Horner's rule.

    Written as ``sigma * sum_d a_d s^d`` with ``s = (t - t_bar tau) / tau``.
    """
    s = (np.asarray(t, dtype=float) - t_bar * quanta.tau) / quanta.tau
    acc = np.zeros_like(s)
    for a in reversed(list(coeffs)):
        acc = acc * s + float(a)
    return quanta.sigma * acc


@dataclass
class TransferFunction:
    """Piecewise linear map from field value to emission RGB and absorption."""

    values: np.ndarray
    rgb: np.ndarray
    absorption: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.rgb = np.asarray(self.rgb, dtype=float).reshape(-1, 3)
        self.absorption = np.asarray(self.absorption, dtype=float)
        if self.values.size == 0 or not (self.values.size == self.rgb.shape[0] == self.absorption.size):
            raise ValueError("transfer function needs matching, non-empty control points")
        if np.any(np.diff(self.values) < 0):
            raise ValueError("transfer function values must be sorted")
        if np.any(self.absorption < 0):
            raise ValueError("absorption must be non-negative")

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        rgb = np.stack([np.interp(v, self.values, self.rgb[:, c]) for c in range(3)], axis=-1)
        return rgb, np.interp(v, self.values, self.absorption)


def _segment(color, T, rgb, a, ds):
    """Exact emission-absorption over a constant sample of length ``ds``."""
    att = np.exp(-a * ds)
    w = np.where(a > 0, (1.0 - att) / np.where(a > 0, a, 1.0), ds)
    for c in range(len(a)):
        color += T * w[c] * rgb[c]
        T *= att[c]
    return color, T


def composite(field, tf, step, near=0.0, far=math.inf):
    """Front-to-back emission-absorption along one ray.

    Each polynomial piece gets ``M = max(2, ceil(length / step))`` midpoint
    samples; the zero field before the first and after the last knot is a
    constant and is integrated exactly. Stops once the opacity exceeds
    0.999.

    Returns
    -------
    ndarray, shape (4,)
        Premultiplied RGB and opacity.
    """
    color = np.zeros(3)
    T = 1.0
    tau = field.quanta.tau
    segs = []
    pos = field.positions.astype(float) * tau
    if len(pos) == 0:
        segs.append((near, far, None))
    else:
        segs.append((near, min(pos[0], far), None))
        for i in range(len(pos) - 1):
            segs.append((max(pos[i], near), min(pos[i + 1], far), i))
        segs.append((max(pos[-1], near), far, None))
    zero_rgb, zero_a = tf(0.0)
    for a, b, i in segs:
        if not b > a:
            continue
        if i is None:
            if math.isinf(b - a):
                if zero_a > 0:
                    T = 0.0
                    break
                continue
            color, T = _segment(color, T, [zero_rgb], np.array([zero_a]), b - a)
        else:
            M = max(2, math.ceil((b - a) / step))
            ds = (b - a) / M
            ts = a + (np.arange(M) + 0.5) * ds
            v = evaluate_piece(field.coeffs[i], int(field.positions[i]), field.quanta, ts)
            rgb, ab = tf(v)
            color, T = _segment(color, T, rgb, ab, ds)
        if 1.0 - T > EARLY_EXIT_OPACITY:
            break
    return np.array([color[0], color[1], color[2], 1.0 - T])


@dataclass
class RenderResult:
    image: np.ndarray
    report: dict
    fields: dict = field(default_factory=dict, repr=False)
    overflows: list = field(default_factory=list)


def _emit(args):
    """Sweep 1 for a chunk of particles."""
    chunk, camera, lut, quanta = args
    out = []
    for pid, p in chunk:
        ix, iy, lam, t_chi = _footprint_arrays(p, camera, lut.q)
        for a, b, l, t in zip(ix, iy, lam, t_chi):
            rid = camera.ray_id(a, b)
            out.extend(quantize_particle(p, float(t), float(l), lut, quanta, ray_id=rid, particle_id=pid))
    return out


def emit_knots(particles, camera, lut, quanta):
    """Sweep 1 on its own: every quantized knot, tagged with ray and particle
    index."""
    return _emit((list(enumerate(particles)), camera, lut, quanta))


def _shade(args):
    """Sweep 3 for a chunk of rays."""
    chunk, quanta, tf, step, near, far, backend, keep = args
    out = []
    for rid, t, b in chunk:
        try:
            f = accumulate(list(zip(t, b)), quanta, ray_id=rid, backend=backend)
        except IntegerOverflowError as exc:
            out.append((rid, None, str(exc), None))
            continue
        out.append((rid, composite(f, tf, step, near, far), None, f if keep else None))
    return out


def _chunks(items, n):
    size = max(1, math.ceil(len(items) / max(n, 1)))
    return [items[i : i + size] for i in range(0, len(items), size)]


def render(
    particles,
    camera,
    lut,
    quanta,
    tf,
    step=None,
    background=(0.0, 0.0, 0.0),
    threads=1,
    backend=None,
    keep_fields=False,
):
    """Render particles; returns a `RenderResult`.

    Quantization overflow while emitting knots aborts with an
    `IntegerOverflowError` naming the particle. Overflow while accumulating
    a ray is recorded (the pixel keeps the background) and counted in the
    report.
    """
    t_start = time.perf_counter()
    if step is None:
        hmin = min((p.h for p in particles), default=1.0)
        step = hmin / 16.0
    indexed = list(enumerate(particles))
    if threads > 1 and len(indexed) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_emit, [(c, camera, lut, quanta) for c in _chunks(indexed, threads)]))
    else:
        parts = [_emit((indexed, camera, lut, quanta))]
    knots = [k for part in parts for k in part]
    t_emit = time.perf_counter()

    streams = sort_knots(knots)
    t_sort = time.perf_counter()

    items = [(rid, [k.t_bar for k in s], [k.b_bar for k in s]) for rid, s in streams.items()]
    near, far = camera.near, camera.far
    args = [(c, quanta, tf, step, near, far, backend, keep_fields) for c in _chunks(items, threads)]
    if threads > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            shaded = [r for part in pool.map(_shade, args) for r in part]
    else:
        shaded = [r for a in args for r in _shade(a)]
    t_shade = time.perf_counter()

    bg = np.asarray(background, dtype=float)
    image = np.broadcast_to(bg, (camera.height, camera.width, 3)).copy()
    fields, overflows = {}, []
    for rid, rgba, err, f in shaded:
        ix, iy = camera.pixel_of(rid)
        if rgba is None:
            overflows.append({"ray_id": rid, "pixel": [ix, iy], "error": err})
            continue
        image[iy, ix] = rgba[:3] + (1.0 - rgba[3]) * bg
        if f is not None:
            fields[rid] = f
    counts = [len(s) for s in streams.values()]
    report = {
        "backend": "python" if _backend.resolve(backend) is None else "cython",
        "particles": len(particles),
        "knots": len(knots),
        "rays_touched": len(streams),
        "max_knots_per_ray": max(counts, default=0),
        "overflow_count": len(overflows),
        "overflows": overflows[:20],
        "quanta": quanta.to_dict(),
        "step": step,
        "timing_s": {
            "emit": t_emit - t_start,
            "sort": t_sort - t_emit,
            "accumulate_composite": t_shade - t_sort,
        },
    }
    return RenderResult(image, report, fields, overflows)
