"""Distance-indexed look-up table of optimal ray-section approximations.

Entry ``i`` sits at ``lam_i = (i + 1/2) q / N`` and stores the optimal
positive knots ``theta_k`` together with the localized difference
coefficients ``s_kd`` of the optimal approximation at those knots, for the
free index pairs ``(k, d)``. The remaining knots (the mirrored negative side,
the middle knot for even K, the odd-order jumps at ``theta_1`` for odd K)
follow from shifted evenness and are recomputed on demand.
"""

from __future__ import annotations

import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from math import comb
from pathlib import Path

import numpy as np

from .approx import ApproxConfig, OptimizationError, equidistant_knots, optimize_knots
from .intarith import close_shifted_even

MAGIC = b"SPLT"
VERSION = 1
DEFAULT_N = 1024
SEED_STRIDE = 16
CONTINUITY_TOL = 1e-9


class LutError(ValueError):
    pass


@dataclass
class LutEntry:
    """Optimal approximation at one normalized distance.

    ``s_hat`` lists the difference coefficients in the lexicographic order of
    ``cfg.index_set``.
    """

    lam: float
    error: float
    knots: np.ndarray
    s_hat: np.ndarray

    def s_matrix(self, cfg):
        """Coefficients as an ``(M, D+1)`` array, zero outside the index set."""
        out = np.zeros((cfg.n_knots, cfg.D + 1))
        for (k, d), v in zip(cfg.index_set, self.s_hat):
            out[k - 1, d] = v
        return out

    def full_knots(self, cfg):
        """All knots of the even function about 0, ascending.

        Returns positions and an ``(n, D+1)`` coefficient array.
        """
        rel, coeffs = close_shifted_even(
            [float(x) for x in self.knots], self.s_matrix(cfg).tolist(), cfg.K % 2 == 1
        )
        return np.array(rel), np.array(coeffs, dtype=float)


def zero_entry(lam, q, cfg):
    M = cfg.n_knots
    return LutEntry(float(lam), 0.0, q * np.arange(1, M + 1) / M, np.zeros(cfg.dimension))


@dataclass
class Lut:
    kernel_id: str
    q: float
    K: int
    D: int
    entries: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.entries) < 2:
            raise LutError("a look-up table needs at least 2 entries")
        lams = np.array([e.lam for e in self.entries])
        if np.any(np.diff(lams) <= 0):
            raise LutError("entries must be strictly increasing in lam")

    @property
    def cfg(self):
        return ApproxConfig(self.K, self.D)

    @property
    def N(self):
        return len(self.entries)

    @property
    def lams(self):
        return np.array([e.lam for e in self.entries])

    @property
    def errors(self):
        return np.array([e.error for e in self.entries])

    @cached_property
    def peak(self):
        """Largest ``|S*(t)|`` over all entries (dense sampling of each piece)."""
        best = 0.0
        for e in self.entries:
            pos, pieces = reconstruct_pieces(e, self.cfg)
            for a, b, c in zip(pos[:-1], pos[1:], pieces[:-1]):
                s = np.linspace(0.0, b - a, 33)
                best = max(best, float(np.max(np.abs(np.polynomial.polynomial.polyval(s, c)))))
        return best

    def __eq__(self, other):
        if not isinstance(other, Lut):
            return NotImplemented
        if (self.kernel_id, self.q, self.K, self.D, self.N) != (other.kernel_id, other.q, other.K, other.D, other.N):
            return False
        return all(
            a.lam == b.lam
            and a.error == b.error
            and np.array_equal(a.knots, b.knots)
            and np.array_equal(a.s_hat, b.s_hat)
            for a, b in zip(self.entries, other.entries)
        )


def lam_grid(q, N):
    return (np.arange(N) + 0.5) * q / N


def taylor_shift(c, h):
    """Coefficients of ``sum_j c_j (x + h)^j`` in powers of ``x``."""
    D = len(c) - 1
    return np.array([sum(comb(j, d) * c[j] * h ** (j - d) for j in range(d, D + 1)) for d in range(D + 1)])


def to_difference_coefficients(solution, knots, cfg):
    """Localized difference coefficients of an optimal solution at its
    positive knots.

    Returns ``{(k, d): s_kd}`` for ``k = 1..M`` and ``d = 0..D``; ``s_k0`` is
    checked to vanish (continuity) and then set to exactly 0.
    """
    f = solution.approximation
    tc = f.t_coeffs()
    knots = np.asarray(knots, dtype=float)
    M, n = tc.shape
    widths = np.diff(np.concatenate([[0.0], knots]))
    scale = max(float(np.max(np.abs(tc[:, 0]))), 1.0) if tc.size else 1.0
    out = {}
    for k in range(1, M + 1):
        left = taylor_shift(tc[k - 1], widths[k - 1])
        right = tc[k] if k < M else np.zeros(n)
        jump = right - left
        if abs(jump[0]) > CONTINUITY_TOL * scale:
            raise LutError(f"approximation is discontinuous at knot {k}: jump {jump[0]:.3e}")
        jump[0] = 0.0
        for d in range(n):
            out[(k, d)] = float(jump[d])
    return out


def update_rule(positions, jumps):
    """Real-valued update rule: piece coefficients about each knot."""
    jumps = np.asarray(jumps, dtype=float)
    D = jumps.shape[1] - 1
    cur = np.zeros(D + 1)
    out = np.zeros_like(jumps)
    for i, (p, b) in enumerate(zip(positions, jumps)):
        if i > 0:
            cur = taylor_shift(cur, p - positions[i - 1])
        cur = b + cur
        out[i] = cur
    return out


def reconstruct_pieces(entry, cfg):
    """Knot positions and the coefficients of the piece starting at each."""
    pos, jumps = entry.full_knots(cfg)
    return pos, update_rule(pos, jumps)


def evaluate_entry(entry, cfg, t):
    """Evaluate the entry's approximation at ``t`` via its knot sequence."""
    pos, pieces = reconstruct_pieces(entry, cfg)
    t = np.asarray(t, dtype=float)
    idx = np.searchsorted(pos, t, side="right") - 1
    out = np.zeros_like(t)
    inside = (idx >= 0) & (idx < len(pos) - 1)
    for i in np.unique(idx[inside]):
        sel = inside & (idx == i)
        out[sel] = np.polynomial.polynomial.polyval(t[sel] - pos[i], pieces[i])
    return out


def _entry_from(lam, knots, solution, cfg):
    s = to_difference_coefficients(solution, knots, cfg)
    return LutEntry(float(lam), float(solution.error), np.asarray(knots, dtype=float).copy(),
                    np.array([s[kd] for kd in cfg.index_set]))


def _solve(kernel, lam, cfg, warm, rng, n_random=None):
    try:
        knots, sol = optimize_knots(kernel, lam, cfg, warm_start=warm, rng=rng, n_random=n_random)
    except OptimizationError as exc:
        raise OptimizationError(f"lam={lam}: {exc}", best=exc.best) from exc
    return _entry_from(lam, knots, sol, cfg)


def _solve_task(args):
    return _solve(*args)


def build_lut(kernel, cfg, N=DEFAULT_N, seed=0, threads=1, seed_stride=SEED_STRIDE, refine_random=0):
    """Optimize every entry of an ``N``-entry table.

    A sequential seed pass handles every ``seed_stride``-th entry. The first
    seed gets a cold multi-start; each later one starts from the previous
    seed's knots, the equidistant knots and two random knot sets. The
    remaining entries are then solved independently (in parallel when
    ``threads > 1``), warm-started from the neighbouring seeds plus
    ``refine_random`` random starts (none by default: with seeds this close
    the extra starts left E* unchanged to 1e-12 in our builds). Random restarts draw from per-entry
    streams spawned from ``seed``, so the table does not depend on
    ``threads``.
    """
    if N < 2:
        raise LutError("N must be at least 2")
    if cfg.D < 1:
        raise LutError("D must be at least 1")
    q = kernel.q
    lams = lam_grid(q, N)
    streams = np.random.SeedSequence(seed).spawn(N)
    seeds = sorted(set(range(min(seed_stride // 2, N - 1), N, seed_stride)))
    entries = [None] * N
    prev = None
    for i in seeds:
        lam = lams[i]
        rng = np.random.default_rng(streams[i])
        if prev is None:
            entries[i] = _solve(kernel, lam, cfg, None, rng)
        else:
            warm = np.array([prev, equidistant_knots(kernel, lam, cfg)])
            entries[i] = _solve(kernel, lam, cfg, warm, rng)
        prev = entries[i].knots

    seed_arr = np.array(seeds)
    tasks = []
    for i in range(N):
        if entries[i] is not None:
            continue
        j = np.searchsorted(seed_arr, i)
        near = [seed_arr[x] for x in (j - 1, j) if 0 <= x < len(seed_arr)]
        warm = np.array([entries[s].knots for s in near])
        tasks.append((i, (kernel, lams[i], cfg, warm, np.random.default_rng(streams[i]), refine_random)))
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_solve_task, [t for _, t in tasks], chunksize=8))
    else:
        results = [_solve_task(t) for _, t in tasks]
    for (i, _), e in zip(tasks, results):
        entries[i] = e
    return Lut(kernel.kernel_id, q, cfg.K, cfg.D, entries)


def overall_error_E_star(lut, constants):
    """All-rays relative error ``(1/kappa) (2 pi int_0^q lam E_lam^2 dlam)^(1/2)``
    as a midpoint sum over the entry grid."""
    dlam = lut.q / lut.N
    total = 2.0 * math.pi * float(np.sum(lut.lams * lut.errors**2)) * dlam
    return math.sqrt(total) / constants.kappa


def lookup(lut, lam):
    """Entry with the nearest ``lam``; ties go to the lower index.

    For ``lam >= q`` a zero entry is returned.
    """
    if lam < 0:
        raise ValueError("ray distance must be non-negative")
    if lam >= lut.q:
        return zero_entry(lam, lut.q, lut.cfg)
    lams = lut.lams
    j = int(np.searchsorted(lams, lam))
    if j == 0:
        return lut.entries[0]
    if j >= len(lams):
        return lut.entries[-1]
    return lut.entries[j - 1] if lam - lams[j - 1] <= lams[j] - lam else lut.entries[j]


def lookup_index(lut, lam):
    """Index used by `lookup`, or -1 for the zero entry."""
    if lam >= lut.q:
        return -1
    e = lookup(lut, lam)
    return int(np.searchsorted(lut.lams, e.lam))


_HEADER = struct.Struct("<4sI16sdIII")


def save_lut(lut, path):
    """Write the little-endian ``.splt`` layout."""
    kid = lut.kernel_id.encode()
    if len(kid) > 16:
        raise LutError("kernel_id longer than 16 bytes")
    M = lut.cfg.n_knots
    J = lut.cfg.dimension
    parts = [_HEADER.pack(MAGIC, VERSION, kid.ljust(16, b"\0"), lut.q, lut.K, lut.D, lut.N)]
    rec = np.empty((lut.N, 2 + M + J), dtype="<f8")
    for i, e in enumerate(lut.entries):
        rec[i, 0] = e.lam
        rec[i, 1] = e.error
        rec[i, 2 : 2 + M] = e.knots
        rec[i, 2 + M :] = e.s_hat
    parts.append(rec.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_lut(path):
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise LutError(f"{path}: truncated header")
    magic, version, kid, q, K, D, N = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise LutError(f"{path}: not a .splt file")
    if version != VERSION:
        raise LutError(f"{path}: unsupported version {version}")
    cfg = ApproxConfig(K, D)
    M, J = cfg.n_knots, cfg.dimension
    rec = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if rec.size != N * (2 + M + J):
        raise LutError(f"{path}: expected {N} records")
    rec = rec.reshape(N, 2 + M + J).astype(float)
    entries = [LutEntry(float(r[0]), float(r[1]), r[2 : 2 + M].copy(), r[2 + M :].copy()) for r in rec]
    return Lut(kid.rstrip(b"\0").decode(), q, K, D, entries)



# Tables shipped with the package, keyed by (kernel_id, K, D). Rebuild with
# ``sphpoly lut-build --K 4 --D 3 --N 16384 --seed 0 --out <file>``.
BUNDLED = {("cubic", 4, 3): "cubic_K4_D3_N16384.splt"}


def bundled_lut_path(kernel_id="cubic", K=4, D=3):
    """Path of a shipped table, or None when there is none for this setting."""
    name = BUNDLED.get((kernel_id, K, D))
    if name is None:
        return None
    path = Path(__file__).with_name("data") / name
    return path if path.exists() else None
