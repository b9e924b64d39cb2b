"""Compiled core against the pure-Python fallback.

Times the two hot paths on identical inputs: the fixed-knot error evaluated
inside the knot optimizer, and the integer accumulation of knot streams.
Both backends must agree on the results before any timing is reported.

    python3 benchmarks/bench_backends.py [--repeat 5] [--json out.json]
"""

import argparse
import json
import sys
import timeit

import numpy as np

from sphpoly import _backend
from sphpoly.approx import ApproxConfig, _error_function, _Section
from sphpoly.intarith import accumulate_stream
from sphpoly.kernel import cubic_spline_kernel, kernel_constants
from sphpoly.lut import build_lut
from sphpoly.quantize import Particle, choose_quanta, dataset_stats, quantize_particle


def error_case(kernel, K, D, n_calls=200, seed=0):
    rng = np.random.default_rng(seed)
    cfg = ApproxConfig(K, D)
    lam = 0.7
    section = _Section(kernel, lam)
    knots = [np.sort(rng.uniform(0.1, 2.0, cfg.n_knots)) for _ in range(n_calls)]
    fns = {be: _error_function(section, cfg, be) for be in ("python", "cython")}
    a = [fns["python"](k) for k in knots]
    b = [fns["cython"](k) for k in knots]
    np.testing.assert_allclose(b, a, rtol=1e-10, atol=1e-14)
    return {be: (lambda f=f: [f(k) for k in knots]) for be, f in fns.items()}, n_calls


def stream_case(kernel, D, width, n_particles=2000, seed=0):
    # A realistic stream: many closed particles overlapping on one ray.
    rng = np.random.default_rng(seed)
    lut = build_lut(kernel, ApproxConfig(4, D), N=32, seed=seed)
    ps = [Particle([0, 0, 0], rng.uniform(0.5, 2), 1.0, rng.uniform(0.05, 0.2), 1.0) for _ in range(n_particles)]
    stats = dataset_stats(ps, lut)
    qu = choose_quanta(lut.cfg, kernel_constants(kernel), kernel.q, stats, width)
    knots = []
    for p in ps:
        knots += quantize_particle(p, float(rng.uniform(0, 20)), float(rng.uniform(0, 1.9)), lut, qu)
    knots.sort(key=lambda k: k.t_bar)
    t = [k.t_bar for k in knots]
    b = [list(k.b_bar) for k in knots]
    ref = accumulate_stream(t, b, width, backend="python")
    got = accumulate_stream(t, b, width, backend="cython")
    assert np.array_equal(ref.positions, got.positions)
    assert [list(map(int, r)) for r in ref.coeffs] == [list(map(int, r)) for r in got.coeffs]
    return {be: (lambda be=be: accumulate_stream(t, b, width, backend=be)) for be in ("python", "cython")}, len(t)


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write the rows as JSON")
    args = ap.parse_args(argv)
    if _backend.accel is None:
        print("compiled backend not built; run `pip install -e . --no-build-isolation` first", file=sys.stderr)
        return 1
    kernel = cubic_spline_kernel()
    rows = []
    for K, D in [(2, 1), (4, 3), (6, 4)]:
        fns, n = error_case(kernel, K, D)
        rows.append({"case": f"fixed_knot_error K={K} D={D}", "unit": "call", "n": n,
                     **{be: best(f, args.repeat) / n for be, f in fns.items()}})
    for D, width in [(3, 64), (5, 64), (3, 128)]:
        fns, n = stream_case(kernel, D, width)
        rows.append({"case": f"accumulate D={D} width={width}", "unit": "knot", "n": n,
                     **{be: best(f, args.repeat) / n for be, f in fns.items()}})
    print(f"{'case':<32} {'python':>12} {'cython':>12} {'speedup':>8}")
    for r in rows:
        r["speedup"] = r["python"] / r["cython"]
        print(f"{r['case']:<32} {r['python'] * 1e6:9.2f} us {r['cython'] * 1e6:9.2f} us {r['speedup']:7.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
