import math

import numpy as np
import pytest

from thinlab.congruence import full_sl2, sl2_order
from thinlab.errors import PreconditionError
from thinlab.spectral import (
    WalshDecomposition,
    build_cayley_operator,
    cluster_eigenvalues,
    contraction_profile,
    flattening_monotone_exact,
    flattening_profile,
    AveragingOperator,
    frobenius_bound_check,
    generator_measure_norm,
    indicator_level_bound,
    l2_norm,
    multiplicity_check,
    spectral_gap,
)

# Second eigenvalues of the Sanov averaging operator, frozen from dense eigh
# and cross-checked against closed forms where one was recognisable.
SANOV_LAMBDA1 = {
    3: (1 + math.sqrt(3)) / 4,
    5: (1 + math.sqrt(5)) / 4,
    7: (2 + math.sqrt(2)) / 4,
    11: 0.8430703,
    13: 0.8918860,
}


@pytest.fixture(scope="module")
def sanov_ops(sanov):
    return {p: build_cayley_operator(sanov, p) for p in SANOV_LAMBDA1}


def test_operator_is_symmetric_stochastic(sanov_ops):
    M = sanov_ops[5].dense()
    assert np.allclose(M, M.T)
    assert np.allclose(M.sum(axis=1), 1.0)


@pytest.mark.parametrize("p", sorted(SANOV_LAMBDA1))
def test_sanov_gap_values(sanov_ops, p):
    r = spectral_gap(sanov_ops[p])
    assert r.dim == sl2_order(p)
    assert r.lambda_1 == pytest.approx(SANOV_LAMBDA1[p], abs=1e-6)
    assert r.residual < 1e-9


def test_power_path_agrees_with_dense(sanov_ops):
    dense = spectral_gap(sanov_ops[7])
    power = spectral_gap(sanov_ops[7], tol=1e-12, force_power=True)
    assert power.method == "power"
    assert power.lambda_1 == pytest.approx(dense.lambda_1, abs=1e-6)


def test_gap_is_relabel_invariant(sanov_ops):
    op = sanov_ops[5]
    order = np.random.default_rng(4).permutation(op.dim)
    assert spectral_gap(op.relabel(order)).lambda_1 == pytest.approx(spectral_gap(op).lambda_1, abs=1e-12)


def test_sanov_mod_2_rejected(sanov):
    with pytest.raises(PreconditionError, match="prime 2"):
        build_cayley_operator(sanov, 2)


def test_explicit_group_skips_check(sanov):
    op = build_cayley_operator(sanov, 2, group=full_sl2(2))
    # the generators reduce to the identity mod 2, so T is the identity
    assert np.allclose(op.dense(), np.eye(6))


@pytest.mark.parametrize("p", [3, 5, 7, 11, 13])
def test_multiplicities(sanov_ops, p):
    rep = multiplicity_check(sanov_ops[p], p)
    assert rep.ok
    assert sum(c for _, c in rep.clusters) == sl2_order(p) - 1


def test_multiplicity_limits(sanov_ops):
    with pytest.raises(PreconditionError):
        multiplicity_check(sanov_ops[5], 7)
    with pytest.raises(PreconditionError):
        multiplicity_check(sanov_ops[5], 17)


def test_cluster():
    assert cluster_eigenvalues([0.5, 0.5 + 1e-10, 0.2, -0.1]) == [(-0.1, 1), (0.2, 1), (pytest.approx(0.5), 2)]


def test_generator_measure_and_frobenius(sanov_ops):
    assert generator_measure_norm(sanov_ops[5]) == pytest.approx(0.5)
    for p in (5, 7, 11):
        holds, top, bound = frobenius_bound_check(sanov_ops[p], p)
        assert holds and top <= bound


def test_flattening_sanov_13(sanov, sanov_ops):
    prof = flattening_profile(sanov, 13, 400, op=sanov_ops[13])
    assert prof.norms[0] == pytest.approx(0.5)
    assert np.all(np.diff(prof.norms) <= 1e-15)
    assert prof.norms[-1] == pytest.approx(prof.floor, abs=1e-8)
    assert prof.floor == pytest.approx(sl2_order(13) ** -0.5)


def test_flattening_exact_monotone(sanov_ops):
    assert flattening_monotone_exact(sanov_ops[13], 400)
    # negative control: a non-permutation "operator" that copies one generator's mass everywhere
    op = sanov_ops[5]
    bad = AveragingOperator(op.group, op.generator_images, np.full_like(op.perm, op.generator_images[0]))
    assert not flattening_monotone_exact(bad, 5)


def test_contraction_rate(sanov_ops):
    op = sanov_ops[7]
    rng = np.random.default_rng(2)
    phi = rng.standard_normal(op.dim)
    phi -= phi.mean()
    lam = spectral_gap(op).lambda_1
    ratios = contraction_profile(op, phi, 30)
    assert np.all(ratios <= lam ** np.arange(1, 31) + 1e-12)


@pytest.fixture(scope="module")
def walsh():
    return WalshDecomposition.for_modulus(15)


class TestWalsh:
    def test_reconstruction_and_orthogonality(self, walsh):
        rng = np.random.default_rng(0)
        phi = rng.standard_normal(walsh.group.size)
        comps = walsh.components(phi)
        assert np.allclose(sum(comps.values()), phi, atol=1e-12)
        keys = sorted(comps)
        for i, a in enumerate(keys):
            for b in keys[i + 1:]:
                assert abs(comps[a] @ comps[b]) < 1e-9
        assert np.allclose(comps[1], phi.mean())

    def test_idempotent(self, walsh):
        phi = np.random.default_rng(1).standard_normal(walsh.group.size)
        p3 = walsh.project(phi, 3)
        assert np.allclose(walsh.project(p3, 3), p3)
        assert np.allclose(walsh.project(p3, 5), 0, atol=1e-12)

    def test_indicator_bound(self, walsh):
        G = walsh.group
        phi = np.zeros(G.size)
        phi[G.identity_index()] = 1.0
        for q1 in (1, 3, 5, 15):
            norm = l2_norm(walsh.project(phi, q1), normalized=True)
            assert norm <= indicator_level_bound(15, q1) * (1 + 1e-12)

    def test_two_dimensional_rows(self, walsh):
        rng = np.random.default_rng(3)
        block = rng.standard_normal((4, walsh.group.size))
        out = walsh.project(block, 5)
        for k in range(4):
            assert np.allclose(out[k], walsh.project(block[k], 5))

    def test_bad_divisor(self, walsh):
        with pytest.raises(PreconditionError):
            walsh.project(np.zeros(walsh.group.size), 7)
