import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thinlab.errors import PreconditionError
from thinlab.hyperbolic import GeneratorSystem, Mat2Z, hyp_distance, mobius_act
from thinlab.thermo import (
    ORIGIN,
    attracting_point,
    birkhoff_periodic,
    build_grid,
    busemann,
    congruence_sector_gap,
    congruence_transfer_matrix,
    cylinder_count,
    estimate_delta,
    eventual_positivity_check,
    gibbs_ratio_check,
    holder_fit,
    leading_eigenvalue,
    make_subshift,
    periodic_tail,
    pressure_curve,
    solve_pressure_zero,
    tau_eval,
    tau_periodic,
    transfer_matrix,
)

# Frozen from the bisection at depth 8; the dense-eigenvalue route below
# reproduces it independently at depth 5.
SCHOTTKY_DELTA = 0.2459948


def admissible(S, word):
    return all(S.transition[a, b] for a, b in zip(word, word[1:]))


@pytest.fixture(scope="module")
def grid5(schottky):
    return build_grid(schottky, 5)


def test_subshift_basepoint(sanov, sl2z):
    assert make_subshift(sanov).basepoint == ORIGIN
    # (U L^-1 U)^2 = -I is an admissible word and fixes every point
    with pytest.raises(PreconditionError, match="fixed by a word"):
        make_subshift(sl2z)


def test_cylinder_counts(sanov, schottky):
    for n in range(1, 7):
        assert cylinder_count(sanov, n) == 4 * 3 ** (n - 1)
        assert build_grid(schottky, n).size == cylinder_count(schottky, n)


def test_tau_single_letter(sanov):
    assert tau_eval(sanov, (0,)) == pytest.approx(math.acosh(3), abs=1e-12)
    with pytest.raises(PreconditionError):
        tau_eval(sanov, (0, 1))


def test_busemann_limit():
    xi = 0.3
    z1, z2 = mobius_act(Mat2Z(2, 1, 1, 1), ORIGIN), ORIGIN
    far = type(ORIGIN)(xi, 1e-7)
    assert busemann(xi, z1, z2) == pytest.approx(hyp_distance(z1, far) - hyp_distance(z2, far), abs=1e-5)


def test_attracting_point(schottky):
    g = schottky.generators[0].as_tuple()
    xi = attracting_point(g)
    a, b, c, d = g
    assert (a * xi + b) / (c * xi + d) == pytest.approx(xi, abs=1e-12)


@given(st.lists(st.integers(0, 3), min_size=1, max_size=6), st.integers(1, 5))
@settings(max_examples=60, deadline=None)
def test_birkhoff_telescopes(word, m):
    """S_m tau at a periodic point equals the sum of tau over its shifts."""
    S = GeneratorSystem.from_base([(5, 2, 2, 1), (13, 45, 2, 7)])
    word = tuple(word)
    if not admissible(S, word):
        return
    period = periodic_tail(S, word)
    L = len(period)
    direct = sum(tau_periodic(S, period[j % L:] + period[:j % L]) for j in range(m))
    assert birkhoff_periodic(S, word, m) == pytest.approx(direct, abs=1e-9)


def test_periodic_tau_is_limit_of_finite_words(schottky):
    for period in [(0,), (0, 2), (1, 3, 0), (2, 0, 3)]:
        p = periodic_tail(schottky, period)
        long = p * (40 // len(p))
        assert tau_eval(schottky, long) == pytest.approx(tau_periodic(schottky, p), abs=1e-8)


def test_positivity(schottky):
    res = eventual_positivity_check(schottky, 4)
    assert res.ok and res.m == 1 and res.min_sum > 0


def test_holder(schottky):
    fit = holder_fit(schottky, [3, 4, 5])
    assert 0 < fit.rho < 0.2
    assert np.all(np.diff(fit.variations) < 0)


def test_transfer_matrix_routes(grid5):
    tm = transfer_matrix(grid5, 0.4)
    D = tm.dense()
    rng = np.random.default_rng(0)
    f = rng.random(grid5.size)
    assert np.allclose(D @ f, tm.apply(f))
    assert np.allclose(D.T @ f, tm.apply_transpose(f))
    # eigh is not applicable (non-symmetric); compare the Perron root with numpy's eig
    et = leading_eigenvalue(tm)
    assert et.lam == pytest.approx(np.max(np.abs(np.linalg.eigvals(D))), rel=1e-10)
    assert et.nu.sum() == pytest.approx(1.0)
    assert float(et.h @ et.nu) == pytest.approx(1.0)
    assert np.all(et.h > 0) and np.all(et.nu > 0)
    assert np.allclose(tm.apply_transpose(et.nu), et.lam * et.nu, rtol=1e-10)


def test_pressure_curve(grid5):
    s = [0.0, 0.25, 0.5, 0.75, 1.0]
    P = pressure_curve(grid5, s)
    assert P[0] == pytest.approx(math.log(3), abs=1e-12)
    assert np.all(np.diff(P) < 0)


def test_delta_dense_oracle(grid5):
    """Independent route: bisection on numpy's dense Perron root."""
    def lam(s):
        return np.max(np.abs(np.linalg.eigvals(transfer_matrix(grid5, s).dense())))

    lo, hi = 0.0, 1.0
    for _ in range(40):
        mid = (lo + hi) / 2
        lo, hi = (mid, hi) if lam(mid) > 1 else (lo, mid)
    s, bracket, lm = solve_pressure_zero(grid5, 1e-9)
    assert s == pytest.approx(lo, abs=1e-8)
    assert bracket[0] <= s <= bracket[1]


def test_delta_estimate(schottky):
    est = estimate_delta(schottky, (4, 5, 6, 7, 8))
    assert est.delta == pytest.approx(SCHOTTKY_DELTA, abs=1e-6)
    assert est.drift < 2e-3
    assert [r[1] for r in est.rows] == [cylinder_count(schottky, n) for n in range(4, 9)]


def test_delta_conjugation_invariant(schottky):
    conj = schottky.conjugate(Mat2Z(1, 1, 0, 1))
    d1 = solve_pressure_zero(build_grid(schottky, 6), 1e-9)[0]
    d2 = solve_pressure_zero(build_grid(conj, 6), 1e-9)[0]
    assert d1 == pytest.approx(d2, abs=1e-6)


def test_gibbs(schottky):
    grid = build_grid(schottky, 6)
    lo, hi = gibbs_ratio_check(grid, SCHOTTKY_DELTA)
    assert 0.3 < lo <= hi < 1.5
    lo2, hi2 = gibbs_ratio_check(grid, SCHOTTKY_DELTA, s_potential=SCHOTTKY_DELTA + 0.3)
    assert hi2 / lo2 > 2 * hi / lo


def test_congruence_matrix_on_constants(grid5):
    M = congruence_transfer_matrix(grid5, 3, 0.3)
    f = np.random.default_rng(5).random(grid5.size)
    F = np.repeat(f[:, None], M.group.size, axis=1)
    out = M.apply(F)
    scalar = transfer_matrix(grid5, 0.3).apply(f)
    assert np.array_equal(out, np.repeat(scalar[:, None], M.group.size, axis=1))


def test_congruence_needs_full_closure(grid5):
    with pytest.raises(PreconditionError):
        congruence_transfer_matrix(grid5, 5, 0.3)


def test_sector_gap(schottky):
    r = congruence_sector_gap(schottky, 4, 3, SCHOTTKY_DELTA)
    assert r.ratio < 0.999
    assert r.cross_check == pytest.approx(r.ratio, abs=0.02)
    assert congruence_sector_gap(schottky, 4, 1, SCHOTTKY_DELTA).ratio == 1.0


def test_shift_order_is_reversed_application_order(schottky):
    from thinlab.hyperbolic import word_to_matrix
    from thinlab.thermo import _word_product

    for word in [(0,), (0, 2), (1, 3, 1, 2), (2, 0, 0, 3)]:
        assert Mat2Z(*_word_product(schottky, word)) == word_to_matrix(schottky, word[::-1])
