"""Exact fixed-width integer arithmetic for knot streams.

The update rule

    a_d <- b_d + sum_{j=d}^{D} C(j, d) a_j (t_k - t_{k-1})^(j-d)

is evaluated with every product and partial sum checked against the
configured width; nothing ever wraps. The compiled kernel in ``_accel`` and
`_accumulate_py` below perform the same operations in the same order, so
they agree bit for bit, including which knot an overflow is reported at and
the instrumented operation count.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from . import _backend

WIDTHS = (32, 64, 128)
MAX_DEGREE = 16
INT64_MIN = -(1 << 63)
INT64_MAX = (1 << 63) - 1

OK, OVERFLOW, UNSORTED = 0, 1, 2


class IntegerOverflowError(ArithmeticError):
    """A checked integer operation left the configured range."""

    def __init__(self, message, index=None, position=None, ray_id=None, particle=None):
        super().__init__(message)
        self.index = index
        self.position = position
        self.ray_id = ray_id
        self.particle = particle


class UnsortedStreamError(ValueError):
    """Knot positions handed to the accumulator are not ascending."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


def int_range(width):
    """Inclusive ``(lo, hi)`` for a signed integer of ``width`` bits."""
    if width not in WIDTHS:
        raise ValueError(f"integer width must be one of {WIDTHS}, got {width}")
    return -(1 << (width - 1)), (1 << (width - 1)) - 1


def int_max(width):
    return int_range(width)[1]


class CheckedOps:
    """Addition and multiplication on Python ints that raise on leaving
    ``[lo, hi]``."""

    def __init__(self, width):
        self.width = width
        self.lo, self.hi = int_range(width)

    def check(self, v):
        if v < self.lo or v > self.hi:
            raise IntegerOverflowError(f"value {v} exceeds {self.width}-bit range")
        return v

    def add(self, a, b):
        return self.check(a + b)

    def mul(self, a, b):
        return self.check(a * b)


@dataclass
class Accumulation:
    """Piecewise coefficients produced by one stream.

    Row ``i`` of ``coeffs`` holds the integer localized coefficients of the
    piece starting at ``positions[i]``. Positions are distinct: knots sharing
    a position were merged. ``coeffs`` is int64 for widths up to 64 and an
    object array of Python ints for width 128.
    """

    positions: np.ndarray
    coeffs: np.ndarray
    ops: int

    @property
    def residual(self):
        """Coefficients after the last knot (zeros for an empty stream)."""
        if len(self.positions) == 0:
            return self.coeffs.reshape(-1)[:0]
        return self.coeffs[-1]


def update_step(cur, row, delta, lo, hi, binom=None):
    """One checked application of the update rule.

    ``cur`` are the coefficients of the previous piece, ``row`` the
    difference coefficients of the new knot and ``delta`` the distance
    between the two knots. Returns ``(ok, coefficients, ops)``; a power of
    ``delta`` that overflows is only an error once it meets a non-zero
    coefficient.
    """
    D = len(row) - 1
    if binom is None:
        binom = [[comb(j, d) for d in range(D + 1)] for j in range(D + 1)]
    ops = 0
    nxt = [0] * (D + 1)
    for d in range(D + 1):
        acc = row[d]
        pw = 1
        over = False
        for j in range(d, D + 1):
            if j > d and not over:
                ops += 1
                v = pw * delta
                if v < lo or v > hi:
                    over = True
                else:
                    pw = v
            if cur[j] != 0:
                if over:
                    return False, nxt, ops
                ops += 3
                term = cur[j] * pw
                if term < lo or term > hi:
                    return False, nxt, ops
                term *= binom[j][d]
                if term < lo or term > hi:
                    return False, nxt, ops
                acc += term
                if acc < lo or acc > hi:
                    return False, nxt, ops
        nxt[d] = acc
    return True, nxt, ops


def _accumulate_py(t, b, lo, hi):
    """Reference implementation of the compiled accumulation kernel."""
    n = len(t)
    D = len(b[0]) - 1 if n else 0
    binom = [[comb(j, d) for d in range(D + 1)] for j in range(D + 1)]

    def out_of(v):
        return v < lo or v > hi

    cur = [0] * (D + 1)
    positions, coeffs = [], []
    ops = 0
    prev = 0
    i = 0
    while i < n:
        p = int(t[i])
        k = i
        if positions and p < prev:
            return UNSORTED, k, positions, coeffs, ops
        row = [int(v) for v in b[i]]
        if any(out_of(v) for v in row):
            return OVERFLOW, k, positions, coeffs, ops
        i += 1
        while i < n and int(t[i]) == p:
            over = False
            for d in range(D + 1):
                v = row[d] + int(b[i][d])
                if out_of(v):
                    over = True
                else:
                    row[d] = v
            ops += D + 1
            if over:
                return OVERFLOW, i, positions, coeffs, ops
            i += 1
        delta = 0
        if positions:
            delta = p - prev
            if delta > hi or delta > INT64_MAX:
                return OVERFLOW, k, positions, coeffs, ops
        ok, nxt, n_ops = update_step(cur, row, delta, lo, hi, binom)
        ops += n_ops
        if not ok:
            return OVERFLOW, k, positions, coeffs, ops
        cur = nxt
        positions.append(p)
        coeffs.append(list(nxt))
        prev = p
    return OK, -1, positions, coeffs, ops


def _validate(t, b, lo, hi):
    """First offending knot as ``(status, index)``, or ``(OK, -1)``.

    Shared by both backends so they see only well-formed input.
    """
    n = len(t)
    if n == 0:
        return OK, -1
    tt = np.asarray(t, dtype=object)
    bad_sort = np.nonzero(tt[1:] < tt[:-1])[0]
    first_sort = int(bad_sort[0]) + 1 if bad_sort.size else n
    bb = np.asarray(b, dtype=object)
    bad = (bb < lo) | (bb > hi)
    bad = np.any(bad, axis=1) | (tt < max(lo, INT64_MIN)) | (tt > min(hi, INT64_MAX))
    bad_idx = np.nonzero(bad)[0]
    first_range = int(bad_idx[0]) if bad_idx.size else n
    if first_sort <= first_range and first_sort < n:
        return UNSORTED, first_sort
    if first_range < n:
        return OVERFLOW, first_range
    return OK, -1


def accumulate_stream(positions, coeffs, width=64, backend=None):
    """Run the integer update rule over one sorted knot stream.

    Parameters
    ----------
    positions : sequence of int
        Knot positions in length quanta, ascending.
    coeffs : array_like, shape (n, D+1)
        Integer difference coefficients per knot.
    width : {32, 64, 128}
    backend : {None, "cython", "python"}

    Returns
    -------
    Accumulation

    Raises
    ------
    UnsortedStreamError, IntegerOverflowError
    """
    lo, hi = int_range(width)
    n = len(positions)
    coeffs_arr = np.asarray(coeffs, dtype=object)
    if n == 0:
        D = coeffs_arr.shape[1] - 1 if coeffs_arr.ndim == 2 else 0
        dtype = object if width == 128 else np.int64
        return Accumulation(np.zeros(0, np.int64), np.zeros((0, D + 1), dtype=dtype), 0)
    if coeffs_arr.ndim != 2 or coeffs_arr.shape[0] != n:
        raise ValueError("coeffs must have one row per knot")
    D = coeffs_arr.shape[1] - 1
    if D > MAX_DEGREE:
        raise ValueError(f"degree {D} exceeds {MAX_DEGREE}")
    status, index = _validate(positions, coeffs_arr, lo, hi)
    if status == OK:
        t = np.array([int(p) for p in positions], dtype=np.int64)
        accel = _backend.resolve(backend)
        if accel is None:
            status, index, pos, cf, ops = _accumulate_py(t, coeffs_arr, lo, hi)
            pos = np.array(pos, dtype=np.int64)
            cf = np.array(cf, dtype=object if width == 128 else np.int64).reshape(-1, D + 1)
        elif width == 128:
            status, index, pos, cf, ops = accel.accumulate128(t, coeffs_arr)
        else:
            b = np.ascontiguousarray(coeffs_arr.astype(np.int64))
            status, index, pos, cf, ops = accel.accumulate64(t, b, lo, hi)
    if status == UNSORTED:
        raise UnsortedStreamError(f"knot {index} at position {positions[index]} precedes its predecessor", index=index)
    if status == OVERFLOW:
        raise IntegerOverflowError(
            f"{width}-bit overflow at knot {index} (position {positions[index]})",
            index=index,
            position=int(positions[index]),
        )
    return Accumulation(pos, cf, int(ops))


def close_shifted_even(offsets, half, odd_K, add=None, mul=None):
    """Complete a particle's knot set from its positive-side coefficients.

    Works on Python ints (pass checked ``add``/``mul``) or on floats.

    Parameters
    ----------
    offsets : sequence, length M
        ``t_k - t_0`` for the positive knots ``k = 1..M``, non-decreasing.
    half : sequence of sequences, shape (M, D+1)
        Difference coefficients ``b_kd`` of the positive knots. Entries not in
        the free index set (``d = 0``; ``k = 1`` with odd ``d`` when K is odd)
        are ignored.
    odd_K : bool

    Returns
    -------
    rel_positions : list
        Knot positions relative to ``t_0``, ascending: ``-offsets[M-1] ..
        -offsets[0]``, then 0 for even K, then ``offsets[0] .. offsets[M-1]``.
    coeffs : list of lists
        Matching difference coefficients; the mirrored ones satisfy
        ``b_{-k,d} = (-1)^(d+1) b_{kd}``.
    """
    add = add or (lambda a, b: a + b)
    mul = mul or (lambda a, b: a * b)
    M = len(offsets)
    D = len(half[0]) - 1
    zero = 0 * half[0][0]
    pos = [[zero] * (D + 1) for _ in range(M)]
    for k in range(M):
        for d in range(1, D + 1):
            if odd_K and k == 0 and d % 2 == 1:
                continue
            pos[k][d] = half[k][d]
    neg = [[(c if d % 2 == 1 else -c) if d else zero for d, c in enumerate(row)] for row in pos]

    def taylor(k, j, d, coeff):
        # C(j, d) * b_{-k,j} * (t_0 - t_{-k})^(j-d), zero coefficients skipped so
        # that an oversized power is harmless unless it is actually used.
        if coeff == 0:
            return zero
        pw = 1
        for _ in range(j - d):
            pw = mul(pw, offsets[k])
        return mul(mul(coeff, pw), comb(j, d))

    middle = None
    if not odd_K:
        middle = [zero] * (D + 1)
        for d in range(1, D + 1, 2):
            s = zero
            for k in range(M):
                for j in range(d, D + 1):
                    s = add(s, taylor(k, j, d, neg[k][j]))
            middle[d] = mul(s, -2)
    else:
        top = D if D % 2 == 1 else D - 1
        for d in range(top, 0, -2):
            s = zero
            for k in range(1, M):
                s = add(s, neg[k][d])
            for j in range(d + 1, D + 1):
                for k in range(M):
                    s = add(s, taylor(k, j, d, neg[k][j]))
            neg[0][d] = mul(s, -1)
            pos[0][d] = neg[0][d]
    rel = [-offsets[k] for k in range(M - 1, -1, -1)]
    out = [neg[k] for k in range(M - 1, -1, -1)]
    if middle is not None:
        rel.append(0 * offsets[0])
        out.append(middle)
    rel.extend(offsets[k] for k in range(M))
    out.extend(pos[k] for k in range(M))
    return rel, out
