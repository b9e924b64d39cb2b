import math
import random

import numpy as np
import pytest

from conftest import BACKENDS
from sphpoly import oracle
from sphpoly.intarith import IntegerOverflowError, UnsortedStreamError
from sphpoly.quantize import Particle, QuantaConfig, QuantizedKnot, choose_quanta, dataset_stats, quantize_particle
from sphpoly.raycast import (
    Camera,
    Ray,
    RayAccumulator,
    RayField,
    TransferFunction,
    accumulate,
    composite,
    emit_knots,
    evaluate_piece,
    particle_ray_footprint,
    render,
    sort_knots,
)


def _scene(rng, n=8):
    return [
        Particle(rng.uniform(-0.5, 0.5, 3), rng.uniform(0.5, 2), rng.uniform(0.5, 2), rng.uniform(0.35, 0.6), rng.uniform(0.5, 2))
        for _ in range(n)
    ]


def _quanta(kernel, constants, lut, particles, width=64):
    return choose_quanta(lut.cfg, constants, kernel.q, dataset_stats(particles, lut), width)


def test_ray_needs_unit_direction():
    with pytest.raises(ValueError):
        Ray([0, 0, 0], [1.0, 1.0, 0.0])


def test_camera_invariants():
    with pytest.raises(ValueError):
        Camera(width=0)
    with pytest.raises(ValueError):
        Camera(near=5.0, far=5.0)
    with pytest.raises(ValueError):
        Camera(mode="fisheye")
    cam = Camera(width=7, height=5)
    assert Camera.from_dict(cam.to_dict()) == cam
    assert all(cam.pixel_of(cam.ray_id(x, y)) == (x, y) for x in range(7) for y in range(5))


def test_footprint_centered_particle(kernel):
    cam = Camera(width=9, height=9, extent=9.0)
    ray = cam.ray(4, 4)
    p = Particle(ray.at(10.0), 1.0, 1.0, 0.4, 1.0)
    hits = {r.pixel: (lam, t) for r, lam, t in particle_ray_footprint(p, cam, kernel.q)}
    assert hits[(4, 4)][0] == 0.0 and hits[(4, 4)][1] == pytest.approx(10.0)


def test_footprint_strict_inequality(kernel):
    # Pixels 1 apart; a particle exactly q*h = 0.5 from four ray lines.
    cam = Camera(width=4, height=4, extent=4.0)
    centre = (cam.ray(1, 1).base + cam.ray(2, 2).base) / 2 + np.array([0, 0, 10.0])
    p = Particle(centre, 1.0, 1.0, 0.5 * math.sqrt(2) / kernel.q, 1.0)
    assert particle_ray_footprint(p, cam, kernel.q) == []


@pytest.mark.parametrize("mode", ["orthographic", "pinhole"])
def test_footprint_matches_brute_force(kernel, rng, mode):
    cam = Camera(mode=mode, width=32, height=32, extent=3.0, eye=(0.3, 0.2, -6.0), fov=30.0)
    for _ in range(10):
        p = Particle(rng.uniform(-1.5, 1.5, 3), 1.0, 1.0, rng.uniform(0.05, 0.6), 1.0)
        got = particle_ray_footprint(p, cam, kernel.q)
        assert {r.pixel for r, _, _ in got} == oracle.brute_force_footprint(p, cam, kernel.q)
        for r, lam, t in got:
            assert lam == pytest.approx(np.linalg.norm(p.position - r.at(t)) / p.h, abs=1e-12)


def test_footprint_behind_camera(kernel):
    cam = Camera(mode="pinhole", eye=(0, 0, 0), target=(0, 0, 1), width=16, height=16)
    p = Particle([0, 0, -5], 1.0, 1.0, 0.5, 1.0)
    assert particle_ray_footprint(p, cam, kernel.q) == []


def test_sort_knots():
    assert sort_knots([]) == {}
    a = [QuantizedKnot(t, (0, 1), 7) for t in (5, 1, 9)]
    b = [QuantizedKnot(t, (0, 2), 7) for t in (3, 4)]
    assert [k.t_bar for k in sort_knots(a + b)[7]] == [1, 3, 4, 5, 9]
    rnd = random.Random(4)
    knots = [QuantizedKnot(rnd.randrange(100), (rnd.randrange(9),), rnd.randrange(10)) for _ in range(1000)]
    streams = sort_knots(knots)
    ref = sorted(knots, key=lambda k: (k.ray_id, k.t_bar))
    assert [k for s in streams.values() for k in s] == ref


def test_evaluate_piece_examples():
    qu = QuantaConfig(tau=0.25, sigma=1e-3, D=3)
    assert np.all(evaluate_piece([0, 0, 0, 0], 5, qu, np.linspace(0, 3, 7)) == 0.0)
    assert evaluate_piece([42, 3, -1, 5], 8, qu, 8 * 0.25)[()] == pytest.approx(42e-3, rel=1e-15)


def test_evaluate_piece_vs_expansion(rng):
    qu = QuantaConfig(tau=0.01, sigma=1e-9, D=4)
    c = rng.integers(-(10**6), 10**6, 5)
    t = 3.0 + rng.uniform(0, 0.5, 10)
    got = evaluate_piece(c, 300, qu, t)
    ref = sum(qu.sigma_d(d) * float(c[d]) * (t - 3.0) ** d for d in range(5))
    np.testing.assert_allclose(got, ref, rtol=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
def test_accumulate_examples(kernel, constants, lut_cache, backend):
    lut = lut_cache(4, 3)
    qu = QuantaConfig(tau=1e-3, sigma=1e-12, D=3)
    empty = accumulate([], qu, backend=backend)
    assert np.all(empty(np.linspace(-1, 1, 11)) == 0.0)
    p = Particle([0, 0, 0], 1.0, 1.0, 0.7, 1.0)
    knots = quantize_particle(p, 0.37, 0.6, lut, qu)
    f = accumulate(knots, qu, backend=backend)
    assert all(v == 0 for v in f.residual)
    # Direct evaluation of the particle's own pieces at 64 midpoints.
    rows = oracle.bigint_replay([(k.t_bar, k.b_bar) for k in knots])
    pos = [t for t, _ in rows]
    mids = np.linspace(pos[0], pos[-1], 66)[1:-1] * qu.tau
    for t in mids:
        i = max(j for j, x in enumerate(pos) if x * qu.tau <= t)
        c = rows[i][1]
        s = (t - pos[i] * qu.tau) / qu.tau
        ref = qu.sigma * sum(float(a) * s**d for d, a in enumerate(c))
        assert f(t)[0] == pytest.approx(ref, rel=1e-12, abs=1e-12 * qu.sigma * max(abs(float(x)) for x in c))


@pytest.mark.parametrize("width", [64, 128])
def test_residual_zero_on_random_rays(kernel, constants, lut_cache, width):
    lut = lut_cache(4, 3)
    rng = np.random.default_rng(21)
    ps = _scene(rng, 6)
    qu = _quanta(kernel, constants, lut, ps, width)
    for _ in range(500):
        knots = []
        for pid in rng.choice(6, int(rng.integers(1, 6)), replace=False):
            knots += quantize_particle(ps[pid], float(rng.uniform(-1, 1)), float(rng.uniform(0, 1.99)), lut, qu, particle_id=int(pid))
        stream = sorted(knots, key=lambda k: k.t_bar)
        for be in BACKENDS:
            f = accumulate(stream, qu, backend=be)
            assert all(int(v) == 0 for v in f.residual)


def test_accumulate_errors(kernel):
    qu = QuantaConfig(tau=1.0, sigma=1.0, int_width=32, D=1)
    with pytest.raises(UnsortedStreamError):
        accumulate([(3, (1, 0)), (1, (0, 0))], qu)
    with pytest.raises(IntegerOverflowError) as info:
        accumulate([(0, (0, 1 << 20)), (1 << 20, (0, 0))], qu, ray_id=42)
    assert info.value.ray_id == 42 and "42" in str(info.value)


def test_incremental_accumulator_matches_batch():
    qu = QuantaConfig(tau=1.0, sigma=1.0, int_width=64, D=2)
    stream = [(0, (1, 2, 3)), (4, (0, -1, 1)), (4, (2, 0, 0)), (9, (-5, 0, 1))]
    acc = RayAccumulator(qu)
    rows = [acc.push(t, b) for t, b in stream]
    f = accumulate(stream, qu)
    assert rows[-1] == f.coeffs[-1].tolist() and rows[2] == f.coeffs[1].tolist()
    with pytest.raises(UnsortedStreamError):
        acc.push(3, (0, 0, 0))


def test_no_tail_contamination(kernel, constants, lut_cache, rng):
    lut = lut_cache(4, 3)
    ps = _scene(rng)
    qu = _quanta(kernel, constants, lut, ps)
    cam = Camera(width=12, height=12, extent=3.0)
    res = render(ps, cam, lut, qu, TransferFunction([0, 1], [[0, 0, 0], [1, 1, 1]], [0, 1]), keep_fields=True)
    for f in res.fields.values():
        end = float(f.positions[-1]) * qu.tau
        t = end + np.concatenate([[0.0, 1e-9], np.geomspace(1e-6, 1e3, 50)])
        assert np.all(f(t) == 0.0)


def test_composite_background_through_zero_field():
    qu = QuantaConfig(tau=1.0, sigma=1.0, D=1)
    f = accumulate([], qu)
    tf = TransferFunction([0.0, 1.0], [[0, 0, 0], [1, 0, 0]], [0.0, 1.0])
    assert composite(f, tf, 0.1, 0.0, 10.0).tolist() == [0.0, 0.0, 0.0, 0.0]


@pytest.mark.parametrize("M", [32, 100])
def test_composite_transmittance(M):
    qu = QuantaConfig(tau=0.01, sigma=1e-6, D=3)
    L, c, sig = 2.0, 0.5, 1.3
    n = round(L / qu.tau)
    f = RayField(np.array([0, n]), np.array([[round(c / qu.sigma), 0, 0, 0], [0, 0, 0, 0]]), qu)
    tf = TransferFunction([0.0, 1.0], [[0, 0, 0], [0, 0, 0]], [sig, sig])
    rgba = composite(f, tf, L / M, 0.0, L)
    assert 1.0 - rgba[3] == pytest.approx(math.exp(-sig * L), rel=0.01)


def test_composite_early_exit():
    qu = QuantaConfig(tau=0.01, sigma=1e-6, D=1)
    f = RayField(np.array([0, 1000]), np.array([[10**6, 0], [0, 0]]), qu)
    tf = TransferFunction([0.0, 1.0], [[1, 1, 1], [1, 1, 1]], [0.0, 100.0])
    assert composite(f, tf, 0.001, 0.0, 10.0)[3] > 0.999


def test_tf_invariants():
    with pytest.raises(ValueError):
        TransferFunction([1, 0], [[0, 0, 0]] * 2, [0, 0])
    with pytest.raises(ValueError):
        TransferFunction([0, 1], [[0, 0, 0]] * 2, [0, -1])


def test_render_matches_fine_ray_marcher(kernel, constants, lut_cache):
    lut = lut_cache(4, 3, 256)
    rng = np.random.default_rng(6)
    ps = _scene(rng)
    qu = _quanta(kernel, constants, lut, ps)
    cam = Camera(width=10, height=10, extent=2.4)
    vmax = 2.0
    # Value 0 is fully transparent, so only the particles' span matters.
    tf = TransferFunction([0.0, vmax], [[0.0, 0.0, 0.0], [1.0, 0.6, 0.1]], [0.0, 1.5])
    hmin = min(p.h for p in ps)
    res = render(ps, cam, lut, qu, tf, step=hmin / 64)
    diffs = []
    for iy in range(cam.height):
        for ix in range(cam.width):
            ray = cam.ray(ix, iy)
            ref = oracle.march_ray(lambda t: oracle.exact_field(ps, ray, t, kernel), tf, 7.0, 13.0, hmin / 64)
            diffs.append(np.abs(res.image[iy, ix] - ref).max())
    assert np.mean(diffs) <= 1e-2 and np.max(diffs) <= 5e-2


def test_render_empty_scene(kernel, constants, lut_cache):
    lut = lut_cache(4, 3)
    qu = QuantaConfig(tau=1e-3, sigma=1e-15, D=3)
    res = render([], Camera(width=5, height=4), lut, qu, TransferFunction([0], [[1, 1, 1]], [0]), background=(0.1, 0.2, 0.3))
    assert res.image.shape == (4, 5, 3) and np.all(res.image == [0.1, 0.2, 0.3])
    assert res.report["knots"] == 0


def test_shuffle_bit_identical(kernel, constants, lut_cache, rng):
    lut = lut_cache(4, 3)
    ps = _scene(rng)
    qu = _quanta(kernel, constants, lut, ps)
    cam = Camera(width=12, height=12, extent=3.0)
    tf = TransferFunction([0, 2], [[0, 0, 0], [1, 1, 1]], [0, 1])
    a = render(ps, cam, lut, qu, tf, keep_fields=True)
    perm = rng.permutation(len(ps))
    b = render([ps[i] for i in perm], cam, lut, qu, tf, keep_fields=True)
    assert a.fields.keys() == b.fields.keys()
    for rid in a.fields:
        assert np.array_equal(a.fields[rid].positions, b.fields[rid].positions)
        assert np.array_equal(a.fields[rid].coeffs, b.fields[rid].coeffs)
    assert np.array_equal(a.image, b.image)


def test_render_threads_identical(kernel, constants, lut_cache, rng):
    lut = lut_cache(4, 3)
    ps = _scene(rng)
    qu = _quanta(kernel, constants, lut, ps)
    cam = Camera(width=8, height=8, extent=3.0)
    tf = TransferFunction([0, 2], [[0, 0, 0], [1, 1, 1]], [0, 1])
    assert np.array_equal(render(ps, cam, lut, qu, tf).image, render(ps, cam, lut, qu, tf, threads=2).image)


def test_render_counts_accumulation_overflow(kernel, constants, lut_cache):
    lut = lut_cache(4, 3)
    ps = [Particle([0, 0, z], 1.0, 1.0, 0.5, 1.0) for z in (0.0, 0.1, 0.2, 0.3)]
    stats = dataset_stats(ps, lut, clustering=0.3)
    qu = choose_quanta(lut.cfg, constants, kernel.q, stats, 32)
    cam = Camera(width=6, height=6, extent=1.5)
    res = render(ps, cam, lut, qu, TransferFunction([0], [[1, 1, 1]], [0]))
    assert res.report["overflow_count"] > 0
    assert all(np.all(res.image[iy, ix] == 0.0) for ix, iy in (o["pixel"] for o in res.overflows))


def test_emit_knots_tags(kernel, constants, lut_cache, rng):
    lut = lut_cache(4, 3)
    ps = _scene(rng, 3)
    qu = _quanta(kernel, constants, lut, ps)
    cam = Camera(width=8, height=8, extent=3.0)
    knots = emit_knots(ps, cam, lut, qu)
    assert {k.particle for k in knots} <= {0, 1, 2}
    assert all(0 <= k.ray_id < cam.n_rays for k in knots)
