# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: fixed-knot projection error and integer ray accumulation.

Both mirror pure-Python implementations elsewhere in the package
(``approx._project`` and ``intarith._accumulate_py``) step for step, so the
two backends agree to rounding (float kernel) or bit for bit (integer
kernel).
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt
from libc.stdlib cimport malloc, free
from libc.stdint cimport int64_t, uint64_t

cnp.import_array()

cdef extern from "_checked.h":
    ctypedef long long sp_i128  # opaque to Cython; real type is __int128
    int sp_add64(int64_t a, int64_t b, int64_t lo, int64_t hi, int64_t *out) nogil
    int sp_mul64(int64_t a, int64_t b, int64_t lo, int64_t hi, int64_t *out) nogil
    int sp_add128(sp_i128 a, sp_i128 b, sp_i128 *out) nogil
    int sp_mul128(sp_i128 a, sp_i128 b, sp_i128 *out) nogil
    sp_i128 sp_make128(int64_t hi, uint64_t lo) nogil
    int64_t sp_hi128(sp_i128 v) nogil
    uint64_t sp_lo128(sp_i128 v) nogil

cdef extern from *:
    bint __builtin_sub_overflow(int64_t a, int64_t b, int64_t *out) nogil


cdef enum:
    ORDER = 32
    MAXD = 16

cdef double GL_X[ORDER]
cdef double GL_W[ORDER]
_x, _w = np.polynomial.legendre.leggauss(ORDER)
for _i in range(ORDER):
    GL_X[_i] = _x[_i]
    GL_W[_i] = _w[_i]

cdef int64_t BINOM[MAXD + 1][MAXD + 1]
for _j in range(MAXD + 1):
    for _d in range(MAXD + 1):
        BINOM[_j][_d] = 0
    BINOM[_j][0] = 1
    for _d in range(1, _j + 1):
        BINOM[_j][_d] = BINOM[_j - 1][_d - 1] + (BINOM[_j - 1][_d] if _d <= _j - 1 else 0)


cdef inline double _kernel_at(double r, const double[::1] kb, const double[:, ::1] kc) noexcept nogil:
    cdef Py_ssize_t npieces = kc.shape[0], ncoef = kc.shape[1], i, j
    cdef double acc
    if r >= kb[npieces]:
        return 0.0
    i = 0
    while i < npieces - 1 and r >= kb[i + 1]:
        i += 1
    acc = 0.0
    for j in range(ncoef - 1, -1, -1):
        acc = acc * r + kc[i, j]
    return acc


def fixed_knot_error(const double[::1] kb, const double[:, ::1] kc, double lam,
                     const double[::1] sbreaks, const double[::1] knots,
                     const long[::1] ks, const long[::1] ds, int D):
    """L2 error of the best approximation for fixed knots.

    Returns -1.0 when Gram-Schmidt detects a degenerate basis.
    """
    cdef Py_ssize_t M = knots.shape[0], nb = ks.shape[0], n = D + 1
    cdef Py_ssize_t ns = sbreaks.shape[0]
    cdef Py_ssize_t nbr = ns + M + 1, i, j, a, b, m, c, nnodes, nv = M * n
    cdef double q = kb[kb.shape[0] - 1]
    cdef double end, top, tmp, lo, hi, mid, half, t, r2, Bv, u, err2, s, num, den
    cdef double *br = <double *> malloc(nbr * sizeof(double))
    cdef double *tt
    cdef double *ww
    cdef double *BB
    cdef long *mm
    cdef double *uu
    cdef double *mu = <double *> malloc(nv * sizeof(double))
    cdef double *V = <double *> malloc(nb * nv * sizeof(double))
    cdef double *lefts = <double *> malloc(M * sizeof(double))
    cdef double *widths = <double *> malloc(M * sizeof(double))
    cdef double *coeffs = <double *> malloc(nv * sizeof(double))
    cdef double *norms0 = <double *> malloc(nb * sizeof(double))
    cdef double hil[MAXD + 1][MAXD + 1]
    cdef int degenerate = 0

    for a in range(n):
        for b in range(n):
            hil[a][b] = 1.0 / (a + b + 1.0)
    end = q * q - lam * lam
    end = sqrt(end) if end > 0 else 0.0
    top = knots[M - 1] if knots[M - 1] > end else end

    # Breakpoints: section breaks, knots, top; sorted and de-duplicated.
    c = 0
    for i in range(ns):
        br[c] = sbreaks[i]; c += 1
    for i in range(M):
        br[c] = knots[i]; c += 1
    br[c] = top; c += 1
    for i in range(1, c):
        tmp = br[i]
        j = i - 1
        while j >= 0 and br[j] > tmp:
            br[j + 1] = br[j]
            j -= 1
        br[j + 1] = tmp
    j = 0
    for i in range(1, c):
        if br[i] > br[j]:
            j += 1
            br[j] = br[i]
    nbr = j + 1

    nnodes = (nbr - 1) * 2 * ORDER
    tt = <double *> malloc(nnodes * sizeof(double))
    ww = <double *> malloc(nnodes * sizeof(double))
    BB = <double *> malloc(nnodes * sizeof(double))
    uu = <double *> malloc(nnodes * sizeof(double))
    mm = <long *> malloc(nnodes * sizeof(long))

    for m in range(M):
        lefts[m] = knots[m - 1] if m > 0 else 0.0
        widths[m] = knots[m] - lefts[m]
    for i in range(nv):
        mu[i] = 0.0

    c = 0
    for i in range(nbr - 1):
        for j in range(2):
            lo = br[i] if j == 0 else 0.5 * (br[i] + br[i + 1])
            hi = 0.5 * (br[i] + br[i + 1]) if j == 0 else br[i + 1]
            mid = 0.5 * (lo + hi)
            half = 0.5 * (hi - lo)
            for a in range(ORDER):
                t = mid + half * GL_X[a]
                tt[c] = t
                ww[c] = half * GL_W[a]
                r2 = lam * lam + t * t
                BB[c] = 0.0 if r2 >= q * q else _kernel_at(sqrt(r2), kb, kc)
                m = 0
                while m < M and knots[m] < t:
                    m += 1
                mm[c] = m
                if m < M:
                    u = (t - lefts[m]) / widths[m]
                    uu[c] = u
                    s = ww[c] * BB[c]
                    for b in range(n):
                        mu[m * n + b] += s
                        s *= u
                c += 1

    # Basis vectors in local-coefficient layout.
    for i in range(nb * nv):
        V[i] = 0.0
    for i in range(nb):
        for m in range(ks[i]):
            V[i * nv + m * n] = 1.0
        V[i * nv + (ks[i] - 1) * n + ds[i]] -= 1.0

    # Modified Gram-Schmidt under the exact piecewise-polynomial metric.
    for i in range(nb):
        norms0[i] = sqrt(_ip(&V[i * nv], &V[i * nv], widths, M, n, hil))
        for j in range(i):
            num = _ip(&V[i * nv], &V[j * nv], widths, M, n, hil)
            den = _ip(&V[j * nv], &V[j * nv], widths, M, n, hil)
            for a in range(nv):
                V[i * nv + a] -= num / den * V[j * nv + a]
        s = _ip(&V[i * nv], &V[i * nv], widths, M, n, hil)
        if not sqrt(s if s > 0 else 0.0) > 1e-10 * norms0[i]:
            degenerate = 1
            break

    err2 = -1.0
    if not degenerate:
        for a in range(nv):
            coeffs[a] = 0.0
        for i in range(nb):
            num = 0.0
            for a in range(nv):
                num += V[i * nv + a] * mu[a]
            num *= 2.0
            den = _ip(&V[i * nv], &V[i * nv], widths, M, n, hil)
            for a in range(nv):
                coeffs[a] += num / den * V[i * nv + a]
        err2 = 0.0
        for i in range(nnodes):
            s = 0.0
            if mm[i] < M:
                u = uu[i]
                for b in range(n - 1, -1, -1):
                    s = s * u + coeffs[mm[i] * n + b]
            s = BB[i] - s
            err2 += ww[i] * s * s
        err2 *= 2.0

    free(br); free(tt); free(ww); free(BB); free(uu); free(mm)
    free(mu); free(V); free(lefts); free(widths); free(coeffs); free(norms0)
    if degenerate:
        return -1.0
    return sqrt(err2) if err2 > 0 else 0.0


cdef inline double _ip(double *f, double *g, double *widths, Py_ssize_t M, Py_ssize_t n,
                       double hil[MAXD + 1][MAXD + 1]) noexcept nogil:
    cdef Py_ssize_t m, a, b
    cdef double total = 0.0, part
    for m in range(M):
        part = 0.0
        for a in range(n):
            if f[m * n + a] == 0.0:
                continue
            for b in range(n):
                part += f[m * n + a] * hil[a][b] * g[m * n + b]
        total += widths[m] * part
    return 2.0 * total


# Status codes shared with intarith.
cpdef enum Status:
    OK = 0
    OVERFLOW = 1
    UNSORTED = 2


def accumulate64(const int64_t[::1] t, const int64_t[:, ::1] b, int64_t lo, int64_t hi):
    """Integer update rule over one sorted stream, 32/64-bit widths.

    Returns ``(status, index, positions, coeffs, ops)``; on failure ``index``
    is the offending knot and the arrays are truncated.
    """
    cdef Py_ssize_t n = t.shape[0], D = b.shape[1] - 1, i = 0, k, d, j, npos = 0
    cdef int64_t p, prev = 0, delta, pw, term, acc
    cdef int over
    cdef long long ops = 0
    cdef int status = OK
    cdef int64_t row[MAXD + 1]
    cdef int64_t cur[MAXD + 1]
    cdef int64_t nxt[MAXD + 1]
    positions = np.empty(n, dtype=np.int64)
    coeffs = np.zeros((n, D + 1), dtype=np.int64)
    cdef int64_t[::1] pv = positions
    cdef int64_t[:, ::1] cv = coeffs
    if D > MAXD:
        raise ValueError("degree too large")
    for d in range(D + 1):
        cur[d] = 0
    with nogil:
        while i < n:
            p = t[i]
            k = i
            if npos > 0 and p < prev:
                status = UNSORTED
                break
            for d in range(D + 1):
                row[d] = b[i, d]
                if row[d] < lo or row[d] > hi:
                    status = OVERFLOW
            if status != OK:
                break
            i += 1
            while i < n and t[i] == p:
                for d in range(D + 1):
                    if sp_add64(row[d], b[i, d], lo, hi, &row[d]):
                        status = OVERFLOW
                ops += D + 1
                if status != OK:
                    k = i
                    break
                i += 1
            if status != OK:
                break
            delta = 0
            if npos > 0:
                if __builtin_sub_overflow(p, prev, &delta) or delta > hi:
                    status = OVERFLOW
                    break
            for d in range(D + 1):
                acc = row[d]
                pw = 1
                over = 0
                for j in range(d, D + 1):
                    if j > d and not over:
                        ops += 1
                        if sp_mul64(pw, delta, lo, hi, &pw):
                            over = 1
                    if cur[j] != 0:
                        if over:
                            status = OVERFLOW
                            break
                        ops += 3
                        if (sp_mul64(cur[j], pw, lo, hi, &term)
                                or sp_mul64(term, BINOM[j][d], lo, hi, &term)
                                or sp_add64(acc, term, lo, hi, &acc)):
                            status = OVERFLOW
                            break
                if status != OK:
                    break
                nxt[d] = acc
            if status != OK:
                break
            for d in range(D + 1):
                cur[d] = nxt[d]
                cv[npos, d] = nxt[d]
            pv[npos] = p
            npos += 1
            prev = p
    if status != OK:
        return status, k, positions[:npos], coeffs[:npos], ops
    return status, -1, positions[:npos], coeffs[:npos], ops


_MASK64 = (1 << 64) - 1


cdef inline sp_i128 _to128(object v):
    return sp_make128(<int64_t> (v >> 64), <uint64_t> (v & _MASK64))


cdef inline object _from128(sp_i128 v):
    return (int(sp_hi128(v)) << 64) | int(sp_lo128(v))


def accumulate128(t, b):
    """128-bit variant of :func:`accumulate64`; coefficients are Python ints
    in object arrays."""
    cdef Py_ssize_t n = len(t), D = b.shape[1] - 1, i = 0, k, d, j, npos = 0
    cdef int64_t p, prev = 0, delta
    cdef sp_i128 pw, term, acc, dl
    cdef int over
    cdef long long ops = 0
    cdef int status = OK
    cdef sp_i128 row[MAXD + 1]
    cdef sp_i128 cur[MAXD + 1]
    cdef sp_i128 nxt[MAXD + 1]
    cdef sp_i128 binom
    lo128 = -(1 << 127)
    hi128 = (1 << 127) - 1
    if D > MAXD:
        raise ValueError("degree too large")
    tv = np.asarray(t, dtype=np.int64)
    cdef int64_t[::1] tview = tv
    # Convert once; out-of-range inputs are flagged before any arithmetic.
    rows = []
    for i in range(n):
        r = []
        for d in range(D + 1):
            v = int(b[i, d])
            if v < lo128 or v > hi128:
                return OVERFLOW, i, np.empty(0, dtype=np.int64), np.empty((0, D + 1), dtype=object), 0
            r.append(v)
        rows.append(r)
    cdef sp_i128 *bb = <sp_i128 *> malloc((n * (D + 1) + 1) * sizeof(sp_i128))
    cdef sp_i128 *out = <sp_i128 *> malloc((n * (D + 1) + 1) * sizeof(sp_i128))
    cdef int64_t *pout = <int64_t *> malloc((n + 1) * sizeof(int64_t))
    for i in range(n):
        for d in range(D + 1):
            bb[i * (D + 1) + d] = _to128(rows[i][d])
    for d in range(D + 1):
        cur[d] = 0
    i = 0
    k = -1
    with nogil:
        while i < n:
            p = tview[i]
            k = i
            if npos > 0 and p < prev:
                status = UNSORTED
                break
            for d in range(D + 1):
                row[d] = bb[i * (D + 1) + d]
            i += 1
            while i < n and tview[i] == p:
                for d in range(D + 1):
                    if sp_add128(row[d], bb[i * (D + 1) + d], &row[d]):
                        status = OVERFLOW
                ops += D + 1
                if status != OK:
                    k = i
                    break
                i += 1
            if status != OK:
                break
            delta = 0
            if npos > 0:
                if __builtin_sub_overflow(p, prev, &delta):
                    status = OVERFLOW
                    break
            dl = <sp_i128> delta
            for d in range(D + 1):
                acc = row[d]
                pw = 1
                over = 0
                for j in range(d, D + 1):
                    if j > d and not over:
                        ops += 1
                        if sp_mul128(pw, dl, &pw):
                            over = 1
                    if cur[j] != 0:
                        if over:
                            status = OVERFLOW
                            break
                        ops += 3
                        binom = <sp_i128> BINOM[j][d]
                        if (sp_mul128(cur[j], pw, &term)
                                or sp_mul128(term, binom, &term)
                                or sp_add128(acc, term, &acc)):
                            status = OVERFLOW
                            break
                if status != OK:
                    break
                nxt[d] = acc
            if status != OK:
                break
            for d in range(D + 1):
                cur[d] = nxt[d]
                out[npos * (D + 1) + d] = nxt[d]
            pout[npos] = p
            npos += 1
            prev = p
    positions = np.empty(npos, dtype=np.int64)
    coeffs = np.empty((npos, D + 1), dtype=object)
    for j in range(npos):
        positions[j] = pout[j]
        for d in range(D + 1):
            coeffs[j, d] = _from128(out[j * (D + 1) + d])
    free(bb); free(out); free(pout)
    if status != OK:
        return status, k, positions, coeffs, ops
    return status, -1, positions, coeffs, ops
