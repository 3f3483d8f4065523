import math
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from thinlab.congruence import closure_mod_q, sl2_order
from thinlab.errors import HorizonError, PreconditionError
from thinlab.hyperbolic import enumerate_ball, norm_sq_bound
from thinlab.counting import (
    RenewalCounter,
    SmoothingKernel,
    ball_distances,
    congruence_count,
    counts_from_ball,
    distance_count,
    distance_variable,
    exponent_fit,
    geometric_ladder,
    orbit_count,
    renewal_identity_check,
    smoothed_count,
    smoothed_from_distances,
)

# N(200) for SL2(Z), frozen; it matches the brute-force entry search in
# test_hyperbolic at small T and the sieve module's ball count.
SL2Z_N200 = 239796


def test_ladder():
    lad = geometric_ladder(2, 200, 1.2)
    assert lad[0] == 2 and lad[-1] == pytest.approx(200)
    assert np.all(np.diff(lad) > 0)
    assert geometric_ladder(1, 8, 2).tolist() == [1, 2, 4, 8]
    with pytest.raises(PreconditionError):
        geometric_ladder(5, 2, 1.5)


def test_distance_variable():
    assert distance_variable(2.0) == pytest.approx(math.acosh(2))
    assert np.isnan(distance_variable(1.0))


def test_counts_match_direct_filter(sl2z):
    lad = geometric_ladder(2, 60, 1.3)
    series = orbit_count(sl2z, lad)
    ball = enumerate_ball(sl2z, 60)
    for T, c in zip(lad, series.counts):
        assert c == int(np.count_nonzero(ball.norm_sq <= norm_sq_bound(T)))
        assert c == len(enumerate_ball(sl2z, T))
    assert np.all(np.diff(series.counts) >= 0)


def test_horizon(sanov):
    ball = enumerate_ball(sanov, 10)
    with pytest.raises(HorizonError):
        counts_from_ball(ball, [5, 20])


def test_sl2z_count_and_slope(sl2z):
    s = orbit_count(sl2z, geometric_ladder(20, 200, 1.2))
    assert s.counts[-1] == SL2Z_N200
    fit = exponent_fit(s)
    assert 1.85 <= fit.slope <= 2.15


def test_fit_recovers_power_law():
    T = np.geomspace(10, 1e4, 20)
    fit = exponent_fit(T, 7.0 * T**1.3, burn_in=0.0)
    assert fit.slope == pytest.approx(1.3, abs=1e-12)
    assert fit.max_residual < 1e-10
    with pytest.raises(PreconditionError):
        exponent_fit(T[:4], T[:4])


def test_congruence_count(sl2z):
    ball = enumerate_ball(sl2z, 100)
    tab = congruence_count(sl2z, 100, 3, ball=ball)
    assert tab.counts.sum() == tab.total == len(ball)
    assert tab.classes_hit == sl2_order(3)
    # independent route: reduce entries directly and tally tuples
    tally = {}
    for row in ball.elements.tolist():
        key = tuple(v % 3 for v in row)
        tally[key] = tally.get(key, 0) + 1
    for k, g in enumerate(tab.group.elements.tolist()):
        assert tally[tuple(g)] == tab.counts[k]


def test_congruence_bad_modulus(sanov):
    with pytest.raises(PreconditionError):
        congruence_count(sanov, 20, 6)


# --------------------------------------------------------------------------
# renewal


def unpruned_count(S, a, x, max_extra):
    """Enumerate every admissible prefix y of length <= max_extra, no pruning."""
    c = RenewalCounter(S, max_length=len(x) + max_extra + 1)
    base = c.dist(tuple(x))
    total = 0
    for n in range(max_extra + 1):
        for y in product(range(S.size), repeat=n):
            w = tuple(y) + tuple(x)
            if all(S.transition[p, r] for p, r in zip(w, w[1:])) and c.dist(w) - base <= a:
                total += 1
    return total


@pytest.mark.parametrize("a", [-1.0, 0.0, 0.5, 2.0, 3.5])
@pytest.mark.parametrize("x", [(), (0,), (2, 1)])
def test_renewal_exact(schottky, a, x):
    r = renewal_identity_check(schottky, a, x)
    assert r.residual == 0


@pytest.mark.parametrize("a,x", [(2.0, ()), (3.0, (0,)), (3.0, (3, 1))])
def test_renewal_counter_vs_unpruned(schottky, a, x):
    c = RenewalCounter(schottky)
    assert c.count(a, x) == unpruned_count(schottky, a, x, 5)


def test_renewal_weighted(schottky):
    phi = lambda w: 1.0 + 0.5 * w[0] if w else 1.0  # noqa: E731
    r = renewal_identity_check(schottky, 3.0, (1,), phi)
    assert r.residual == pytest.approx(0.0, abs=1e-9)


def test_renewal_horizon(schottky):
    with pytest.raises(HorizonError):
        RenewalCounter(schottky, max_length=3).count(30.0, ())


def test_renewal_ball_agreement(schottky):
    """N(a, ()) counts words with d(o, g i) <= a: the ball at matching T."""
    a = 6.0
    c = RenewalCounter(schottky)
    ball = enumerate_ball(schottky, max_norm_sq=math.floor(2 * math.cosh(a)))
    assert c.count(a, ()) == distance_count(ball_distances(ball), a + 1e-12)


# --------------------------------------------------------------------------
# smoothing


def test_kernel_mass():
    for g in (0.05, 0.3, 1.0):
        assert SmoothingKernel(g).mass() == pytest.approx(1.0, abs=1e-10)
    k = SmoothingKernel(0.2)
    assert k(0.11) == 0.0 and k(0.0) > 0
    with pytest.raises(PreconditionError):
        SmoothingKernel(0.0)


@given(st.floats(1.0, 6.0), st.floats(0.05, 0.8))
@settings(max_examples=25, deadline=None)
def test_smoothing_sandwich(a, gamma):
    rng = np.random.default_rng(0)
    d = np.sort(rng.uniform(0, 7, 300))
    k = SmoothingKernel(gamma)
    val = smoothed_from_distances(d, k, a)
    assert distance_count(d, a - gamma / 2) - 1e-9 <= val <= distance_count(d, a + gamma / 2) + 1e-9


def test_smoothing_matches_quadrature():
    d = np.array([0.3, 1.1, 1.15, 1.4, 2.0])
    k = SmoothingKernel(0.5)
    a = 1.2
    direct = integrate.quad(lambda t: k(t) * distance_count(d, a + t), -0.25, 0.25,
                            points=[x - a for x in d], limit=200, epsabs=1e-12)[0]
    assert smoothed_from_distances(d, k, a) == pytest.approx(direct, abs=1e-8)


def test_smoothed_count_classes(sl2z):
    k = SmoothingKernel(0.2)
    a = 5.0
    total = smoothed_count(sl2z, k, a)
    ball = enumerate_ball(sl2z, max_norm_sq=math.floor(2 * math.cosh(a + 0.1)))
    parts = sum(smoothed_count(sl2z, k, a, 3, tuple(g), ball=ball) for g in closure_mod_q(sl2z, 3).elements)
    assert parts == pytest.approx(total, rel=1e-12)
    with pytest.raises(PreconditionError):
        smoothed_count(sl2z, k, a, 3, ball=ball)
