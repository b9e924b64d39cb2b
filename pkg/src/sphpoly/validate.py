"""Oracle cross-checks of a rendered dataset.

Three groups, each comparing the production path against `oracle`:

telescoping
    The integer update rule run by `raycast.accumulate` agrees with an
    unbounded-integer replay, and the field returns to exactly zero after
    the last knot of every ray.
superposition
    At every knot of a ray, the accumulated coefficients equal the sum of
    the per-particle accumulations shifted to that position, in exact
    integers.
envelope
    The per-ray relative L2 deviation of the quantized field from the exact
    field stays below ``factor * sqrt(E*^2 + Q_D^2)`` on at least
    ``fraction`` of the rays.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from math import comb

import numpy as np

from . import oracle
from .intarith import IntegerOverflowError
from .lut import overall_error_E_star
from .raycast import accumulate, emit_knots, sort_knots

ENVELOPE_FACTOR = 4.0
ENVELOPE_FRACTION = 0.95


@dataclass
class GroupResult:
    name: str
    passed: bool
    checked: int
    failed: int
    detail: dict = field(default_factory=dict)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        extra = ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in self.detail.items())
        return f"{status} {self.name}: {self.checked - self.failed}/{self.checked} ok" + (f" ({extra})" if extra else "")


def ray_streams(particles, camera, lut, quanta):
    """Sorted knot stream of every ray touched by the particles."""
    return sort_knots(emit_knots(particles, camera, lut, quanta))


def _pairs(stream):
    return [(k.t_bar, list(k.b_bar)) for k in stream]


def check_telescoping(streams, quanta, backend=None):
    failed, overflow = 0, 0
    for rid, stream in streams.items():
        try:
            f = accumulate(stream, quanta, ray_id=rid, backend=backend)
        except IntegerOverflowError:
            overflow += 1
            failed += 1
            continue
        ref = oracle.bigint_replay(_pairs(stream))
        same = [int(p) for p in f.positions] == [t for t, _ in ref] and all(
            [int(v) for v in row] == c for row, (_, c) in zip(f.coeffs, ref)
        )
        if not (same and all(v == 0 for v in ref[-1][1])):
            failed += 1
    return GroupResult("telescoping", failed == 0, len(streams), failed, {"overflow": overflow})


def _shift(coeffs, delta):
    D = len(coeffs) - 1
    return [sum(comb(j, d) * coeffs[j] * delta ** (j - d) for j in range(d, D + 1)) for d in range(D + 1)]


def _state_at(replay, t):
    """Coefficients of a replayed field about position ``t`` (zero before
    its first knot)."""
    prev = None
    for pos, c in replay:
        if pos > t:
            break
        prev = (pos, c)
    if prev is None:
        return [0] * len(replay[0][1])
    return _shift(prev[1], t - prev[0])


def _production_rows(stream, quanta, backend):
    f = accumulate(stream, quanta, backend=backend)
    return [(int(p), [int(v) for v in row]) for p, row in zip(f.positions, f.coeffs)]


def check_superposition(streams, quanta, backend=None):
    """Production field of all particles on a ray against the sum of the
    production fields of each particle alone, compared at every knot in
    exact integers."""
    failed, overflow = 0, 0
    for stream in streams.values():
        by_particle = defaultdict(list)
        for k in stream:
            by_particle[k.particle].append(k)
        try:
            combined = _production_rows(stream, quanta, backend)
            singles = [_production_rows(s, quanta, backend) for s in by_particle.values()]
        except IntegerOverflowError:
            overflow += 1
            failed += 1
            continue
        for t, c in combined:
            total = [0] * len(c)
            for rep in singles:
                total = [a + b for a, b in zip(total, _state_at(rep, t))]
            if total != c:
                failed += 1
                break
    return GroupResult("superposition", failed == 0, len(streams), failed, {"overflow": overflow})


def _exact_interval(particles, ray, q):
    lo, hi = math.inf, -math.inf
    for p in particles:
        rel = p.position - ray.base
        tc = float(rel @ ray.direction)
        d2 = float(rel @ rel) - tc * tc
        R = q * p.h
        if d2 < R * R:
            half = math.sqrt(R * R - d2)
            lo, hi = min(lo, tc - half), max(hi, tc + half)
    return lo, hi


def envelope_errors(particles, camera, streams, quanta, kernel, samples_per_h=64, backend=None):
    """Per-ray relative L2 deviation of the quantized field from the exact
    field, measured over the union of the knot span and the exact support."""
    hmin = min(p.h for p in particles)
    step = hmin / samples_per_h
    out = {}
    for rid, stream in streams.items():
        ray = camera.ray(*camera.pixel_of(rid))
        try:
            f = accumulate(stream, quanta, ray_id=rid, backend=backend)
        except IntegerOverflowError:
            out[rid] = math.inf
            continue
        lo, hi = _exact_interval(particles, ray, kernel.q)
        a = min(lo, stream[0].t_bar * quanta.tau)
        b = max(hi, stream[-1].t_bar * quanta.tau)

        def exact(t):
            return oracle.exact_field(particles, ray, t, kernel)

        num = oracle.l2_error_dense(f, exact, (a, b), step)
        den = oracle.l2_error_dense(lambda t: np.zeros_like(t), exact, (a, b), step)
        out[rid] = num / den if den > 0 else (0.0 if num == 0 else math.inf)
    return out


def check_envelope(particles, camera, streams, lut, quanta, kernel, constants,
                   factor=ENVELOPE_FACTOR, fraction=ENVELOPE_FRACTION, backend=None):
    E = overall_error_E_star(lut, constants)
    bound = factor * math.hypot(E, quanta.Q_D)
    errs = np.array(list(envelope_errors(particles, camera, streams, quanta, kernel, backend=backend).values()))
    ok = int(np.sum(errs <= bound))
    n = len(errs)
    frac = ok / n if n else 1.0
    detail = {"bound": bound, "E_star": E, "Q_D": quanta.Q_D, "fraction_ok": frac,
              "median": float(np.median(errs)) if n else 0.0}
    return GroupResult("envelope", frac >= fraction, n, n - ok, detail)


def validate(particles, camera, lut, quanta, kernel, constants, backend=None):
    """Run all three groups; returns a list of `GroupResult`."""
    streams = ray_streams(particles, camera, lut, quanta)
    return [
        check_telescoping(streams, quanta, backend=backend),
        check_superposition(streams, quanta, backend),
        check_envelope(particles, camera, streams, lut, quanta, kernel, constants, backend=backend),
    ]
