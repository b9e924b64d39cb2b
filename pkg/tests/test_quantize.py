import math
from fractions import Fraction

import numpy as np
import pytest
from scipy.integrate import trapezoid

from sphpoly import oracle
from sphpoly.intarith import IntegerOverflowError, close_shifted_even
from sphpoly.lut import evaluate_entry, lookup
from sphpoly.quantize import (
    DatasetStats,
    Particle,
    QuantaConfig,
    QuantaError,
    choose_quanta,
    dataset_stats,
    optimal_tau,
    quantization_error,
    quantization_error_derivatives,
    quantize_particle,
    variance_sigma,
)
from sphpoly.raycast import accumulate

Q_FIGURE = {2: 6.30864792448258e-6, 3: 8.55541558867942e-5, 4: 4.10901829274932e-4, 5: 1.17290391232476e-3, 6: 2.48526771799010e-3}


def _unit_particle(h=1.0):
    return Particle([0.0, 0.0, 0.0], 1.0, 1.0, h, 1.0)


def _figure_Q(kernel, constants, D):
    sigma = variance_sigma(1e5, 64, kernel)
    return quantization_error(D, constants, kernel.q, optimal_tau(D, constants, kernel.q, sigma), sigma)


def test_Q_positional_limit(constants):
    tau = 0.01
    assert quantization_error(3, constants, 2.0, tau, 0.0) == pytest.approx(
        constants.kappa_prime * tau / (4 * constants.kappa), rel=1e-14
    )


def test_Q_closed_form_by_hand(constants):
    tau, sigma, q = 0.03, 1e-7, 2.0
    s = constants.kappa_prime**2 * tau**2
    for d in range(3):
        s += 2 * q ** (2 * d + 3) / ((2 * d + 1) * (2 * d + 3)) * sigma**2 / tau ** (2 * d)
    assert quantization_error(2, constants, q, tau, sigma) == pytest.approx(math.sqrt(s) / (4 * constants.kappa), rel=1e-14)


@pytest.mark.parametrize("D", [3, 6])
def test_Q_figure_values(kernel, constants, D):
    assert _figure_Q(kernel, constants, D) == pytest.approx(Q_FIGURE[D], rel=0.2)


def test_Q_monotone_in_sigma(constants):
    sig = np.logspace(-20, -2, 50)
    Q = [quantization_error(3, constants, 2.0, 1e-3, s) for s in sig]
    assert np.all(np.diff(Q) > 0)


def test_Q_rejects_bad_quanta(constants):
    with pytest.raises(QuantaError):
        quantization_error(3, constants, 2.0, 0.0, 1e-3)


def test_sigma_from_a_max(kernel, constants):
    stats = DatasetStats(a_max=1.0, mass=1.0, density=1.0, h=1.0, value=1.0)
    qu = choose_quanta(3, constants, kernel.q, stats, 64)
    assert qu.sigma == 1.0 / (2**63 - 1)
    assert qu.sigma == pytest.approx(1.084e-19, rel=1e-3)
    assert qu.sigma_d(2) == qu.sigma / qu.tau**2


def test_choose_quanta_rejects_D0(kernel, constants):
    stats = DatasetStats(a_max=1.0, mass=1.0, density=1.0, h=1.0, value=1.0)
    with pytest.raises(QuantaError):
        choose_quanta(0, constants, kernel.q, stats)


@pytest.mark.parametrize("D,sigma", [(1, 1e-12), (3, 1e-14), (6, 1e-5)])
def test_optimal_tau_matches_grid(constants, D, sigma):
    tau = optimal_tau(D, constants, 2.0, sigma)
    grid = np.logspace(math.log10(tau) - 1, math.log10(tau) + 1, 10_000)
    Q = [quantization_error(D, constants, 2.0, t, sigma) for t in grid]
    assert tau == pytest.approx(grid[int(np.argmin(Q))], rel=1e-3)


def test_second_derivative_positive(constants, rng):
    for _ in range(100):
        tau = 10 ** rng.uniform(-6, 0)
        sigma = 10 ** rng.uniform(-20, -2)
        D = int(rng.integers(1, 7))
        first, second = quantization_error_derivatives(D, constants, 2.0, tau, sigma)
        assert second > 0
        # First derivative against a central difference of Q_D^2.
        h = tau * 1e-5
        fd = (quantization_error(D, constants, 2.0, tau + h, sigma) ** 2 - quantization_error(D, constants, 2.0, tau - h, sigma) ** 2) / (2 * h)
        assert first == pytest.approx(fd, rel=1e-4, abs=1e-12 * abs(second) * tau)


def test_dataset_stats_examples(lut_cache):
    lut = lut_cache(4, 3)
    s = dataset_stats([_unit_particle()], lut)
    assert s.phi_repr == 1.0
    s = dataset_stats([_unit_particle(1.0), _unit_particle(2.0)], lut)
    assert s.h == 1.5
    with pytest.raises(QuantaError):
        dataset_stats([], lut)


def test_a_max_bounds_dense_field(kernel, lut_cache):
    lut = lut_cache(4, 3)
    rng = np.random.default_rng(8)
    ps = [Particle(rng.uniform(-0.3, 0.3, 3), rng.uniform(0.5, 2), 1.0, rng.uniform(0.4, 0.6), 1.0) for _ in range(8)]
    stats = dataset_stats(ps, lut)
    # The dense field maximum bounds the ray integrals via the longest chord.
    chord = 2 * kernel.q * max(p.h for p in ps)
    assert stats.a_max >= oracle.field_max_dense(ps, kernel, n=48) * chord


def test_variance_override(kernel, lut_cache):
    s = dataset_stats([_unit_particle()], lut_cache(4, 3), variance=1e5, kernel=kernel)
    assert s.variance(kernel) == pytest.approx(1e5, rel=1e-14)
    with pytest.raises(QuantaError):
        dataset_stats([_unit_particle()], lut_cache(4, 3), variance=1e5)


def _setup(kernel, constants, lut, width=64):
    stats = dataset_stats([_unit_particle()], lut)
    return choose_quanta(lut.cfg, constants, kernel.q, stats, width)


def test_outside_support_is_empty(kernel, constants, lut_cache):
    lut = lut_cache(4, 3)
    qu = _setup(kernel, constants, lut)
    assert quantize_particle(_unit_particle(), 0.0, 2.0, lut, qu) == []


def _centre(knots):
    ts = [k.t_bar for k in knots]
    return (ts[0] + ts[-1]) // 2


@pytest.mark.parametrize("KD", [(4, 3), (3, 2), (5, 3)])
def test_mirror_law(kernel, constants, lut_cache, KD):
    lut = lut_cache(*KD)
    qu = _setup(kernel, constants, lut)
    rng = np.random.default_rng(2)
    for _ in range(1000 // 3):
        p = Particle([0, 0, 0], rng.uniform(0.1, 3), rng.uniform(0.5, 2), rng.uniform(0.5, 2), rng.uniform(-1, 1))
        knots = quantize_particle(p, float(rng.uniform(-5, 5)), float(rng.uniform(0, 1.99)), lut, qu)
        t0 = _centre(knots)
        by_pos = {k.t_bar - t0: k.b_bar for k in knots}
        for off, b in by_pos.items():
            if off > 0 and -off in by_pos:
                mirror = by_pos[-off]
                assert all(mirror[d] == (-1) ** (d + 1) * b[d] for d in range(1, len(b)))


@pytest.mark.parametrize("KD", [(4, 3), (3, 2), (2, 1), (5, 4)])
@pytest.mark.parametrize("width", [64, 128])
def test_telescoping_and_big_integer_closure(kernel, constants, lut_cache, KD, width):
    lut = lut_cache(*KD)
    qu = _setup(kernel, constants, lut, width)
    rng = np.random.default_rng(3)
    for _ in range(40):
        lam = float(rng.uniform(0, 1.99))
        t_chi = float(rng.uniform(-4, 4))
        p = Particle([0, 0, 0], rng.uniform(0.1, 3), 1.0, rng.uniform(0.3, 2), 1.0)
        knots = quantize_particle(p, t_chi, lam, lut, qu)
        rows = oracle.bigint_replay([(k.t_bar, k.b_bar) for k in knots])
        assert rows[-1][1] == [0] * (KD[1] + 1)
        # Independent closure in unbounded integers from the same rounded inputs.
        e = lookup(lut, lam)
        t0 = round(t_chi / qu.tau)
        offsets = [round(p.h * th / qu.tau) for th in e.knots]
        base = p.mass * p.value / (qu.sigma * p.density * p.h**3)
        half = [[0] * (KD[1] + 1) for _ in offsets]
        for (k, d), s in zip(lut.cfg.index_set, e.s_hat):
            half[k - 1][d] = round(base * (qu.tau / p.h) ** d * s)
        ref = oracle.bigint_replay(oracle.bigint_close(t0, offsets, half, KD[0]))
        assert rows == ref


def test_shifted_evenness_exact(kernel, constants, lut_cache, rng):
    lut = lut_cache(4, 3)
    qu = _setup(kernel, constants, lut)
    p = Particle([0, 0, 0], 1.3, 1.0, 0.8, 0.7)
    knots = quantize_particle(p, 1.234, 0.77, lut, qu)
    rows = oracle.bigint_replay([(k.t_bar, k.b_bar) for k in knots])
    pos = [t for t, _ in rows]
    t0 = (pos[0] + pos[-1]) // 2
    assert 2 * t0 == pos[0] + pos[-1]

    def value(x):
        # Exact field value (times sigma) at a rational point x given as (num, den).
        num, den = x
        i = max(j for j, t in enumerate(pos) if t * den <= num) if pos[0] * den <= num else None
        if i is None:
            return 0
        c = rows[i][1]
        s = Fraction(num, den) - pos[i]
        return sum(Fraction(a) * s**d for d, a in enumerate(c))

    half = pos[-1] - t0
    for s in rng.integers(0, 8 * half + 1, 1000):
        s = int(s)
        assert value((8 * t0 + s, 8)) == value((8 * t0 - s, 8))


def test_gap_to_unquantized(kernel, constants, lut_cache):
    for KD in [(4, 3), (3, 2), (2, 1)]:
        lut = lut_cache(*KD)
        rng = np.random.default_rng(1)
        for h, m in [(1.0, 1.0), (0.3, 2.0)]:
            p = Particle([0, 0, 0], m, 1.0, h, 1.0)
            for width in (32, 64):
                qu = choose_quanta(lut.cfg, constants, kernel.q, dataset_stats([p], lut), width)
                lams = np.linspace(0, kernel.q, 81)[:-1]
                s = np.linspace(-2.2, 2.2, 8001)
                g2 = []
                for lam in lams:
                    t_chi = float(rng.uniform(-3, 3))
                    f = accumulate(quantize_particle(p, t_chi, lam, lut, qu), qu)
                    exact = p.phi * evaluate_entry(lookup(lut, lam), lut.cfg, s)
                    g2.append(trapezoid((f(t_chi + s * h) - exact) ** 2, s))
                G = math.sqrt(trapezoid(lams * np.array(g2), lams))
                assert G <= 4 * qu.Q_D * constants.kappa * p.phi


def test_overflow_names_particle(kernel, constants, lut_cache):
    lut = lut_cache(4, 3)
    qu = _setup(kernel, constants, lut, 32)
    big = Particle([0, 0, 0], 1e12, 1.0, 1.0, 1.0)
    with pytest.raises(IntegerOverflowError) as info:
        quantize_particle(big, 0.0, 0.3, lut, qu, particle_id=17)
    assert info.value.particle == 17 and "17" in str(info.value)


def test_quanta_invariants():
    with pytest.raises(QuantaError):
        QuantaConfig(tau=0.0, sigma=1.0)
    qu = QuantaConfig(tau=0.5, sigma=1.0, int_width=32)
    assert qu.INT_MAX == 2**31 - 1 and qu.sigma_d(3) == 8.0


def test_float_closure_matches_integer(rng):
    offsets = [3, 7, 12]
    half = [[0, 5, -2, 1], [0, -3, 4, 2], [0, 1, 1, -1]]
    for odd in (False, True):
        ri, ci = close_shifted_even(offsets, half, odd)
        rf, cf = close_shifted_even([float(o) for o in offsets], [[float(v) for v in r] for r in half], odd)
        assert ri == rf
        np.testing.assert_array_equal(np.array(ci, dtype=float), np.array(cf))
