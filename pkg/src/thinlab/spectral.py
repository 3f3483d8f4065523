"""Cayley-graph averaging operators on SL2(Z/qZ) and their spectra.

The averaging operator is ``(Tf)(x) = mean_{s in S} f(s x)``.  Because the
generator multiset is closed under inversion, ``T`` is symmetric, and on
measures it coincides with convolution by the uniform generator measure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import sqrt

import numpy as np

from . import _kernels
from .congruence import ResidueGroup, SquareFreeModulus, closure_mod_q, full_sl2, sl2_order
from .errors import ConvergenceError, PreconditionError
from .hyperbolic import GeneratorSystem

DENSE_LIMIT = 5000


@dataclass(frozen=True)
class AveragingOperator:
    group: ResidueGroup
    generator_images: np.ndarray  # dense index of each generator (with multiplicity)
    perm: np.ndarray  # perm[s, x] = index(g_s @ x)

    @property
    def dim(self) -> int:
        return self.group.size

    @property
    def q(self) -> int:
        return self.group.q

    def apply(self, f) -> np.ndarray:
        return _kernels.cayley_apply(self.perm, f)

    def dense(self) -> np.ndarray:
        n, m = self.dim, self.perm.shape[0]
        M = np.zeros((n, n))
        rows = np.tile(np.arange(n), m)
        np.add.at(M, (rows, self.perm.ravel()), 1.0 / m)
        return M

    def generator_measure(self) -> np.ndarray:
        mu = np.bincount(self.generator_images, minlength=self.dim).astype(np.float64)
        return mu / mu.sum()

    def relabel(self, order: np.ndarray) -> "AveragingOperator":
        """The same operator after renaming element ``x`` to ``order[x]``.

        Only meaningful for spectral comparisons; the result is no longer
        indexed lexicographically.
        """
        inv = np.empty_like(order)
        inv[order] = np.arange(order.size)
        perm = order[self.perm[:, inv]]
        return AveragingOperator(self.group, order[self.generator_images], perm)


def build_cayley_operator(S: GeneratorSystem, q, *, group: ResidueGroup | None = None) -> AveragingOperator:
    """Averaging operator of the generators acting on ``group``.

    By default ``group`` is the closure of S mod q, which must be all of
    SL2(Z/qZ).  Passing an explicit ``group`` (e.g. the full SL2 table while
    S generates a proper subgroup) skips that check.
    """
    m = SquareFreeModulus.of(q)
    if group is None:
        group = closure_mod_q(S, m)
        if not group.is_full:
            bad = [p for p in m.prime_factors if not closure_mod_q(S, p).is_full]
            where = f"prime {bad[0]}" if bad else f"modulus {m.q}"
            raise PreconditionError(f"closure of generators is not all of SL2 at {where}")
    gens = S.as_array(np.int64)
    perm = np.stack([group.left_perm(g) for g in gens])
    images = group.index_of(gens)
    return AveragingOperator(group, images, perm)


# --------------------------------------------------------------------------
# spectra


@dataclass
class SpectrumReport:
    q: int
    dim: int
    lambda_1: float
    gap: float
    iterations: int
    residual: float
    method: str
    eigenvalues: np.ndarray | None = field(default=None, repr=False)


def _centre(v):
    return v - v.mean()


def spectral_gap(op: AveragingOperator, tol: float = 1e-10, *, max_iter: int = 200_000,
                 force_power: bool = False, seed: int = 0) -> SpectrumReport:
    """Largest |eigenvalue| of T on functions orthogonal to constants."""
    if tol <= 0:
        raise PreconditionError("tol must be positive")
    n = op.dim
    if n == 1:
        return SpectrumReport(op.q, 1, 0.0, 1.0, 0, 0.0, "trivial", np.zeros(0))
    if n <= DENSE_LIMIT and not force_power:
        M = op.dense()
        vals, vecs = np.linalg.eigh(M)
        # drop the constant eigenvector: one copy of the eigenvalue nearest 1
        k = int(np.argmin(np.abs(vals - 1.0)))
        rest = np.delete(vals, k)
        rest_vecs = np.delete(vecs, k, axis=1)
        j = int(np.argmax(np.abs(rest)))
        lam, v = rest[j], rest_vecs[:, j]
        resid = float(np.linalg.norm(op.apply(v) - lam * v))
        return SpectrumReport(op.q, n, float(abs(lam)), float(1 - abs(lam)), 0, resid, "dense", rest)
    return _power_gap(op, tol, max_iter, seed)


def _power_gap(op, tol, max_iter, seed):
    """Power iteration on T^2 restricted to mean-zero functions."""
    rng = np.random.default_rng(seed)
    v = _centre(rng.standard_normal(op.dim))
    v /= np.linalg.norm(v)
    mu = 0.0
    for it in range(1, max_iter + 1):
        w = _centre(op.apply(op.apply(v)))
        mu = float(v @ w)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return SpectrumReport(op.q, op.dim, 0.0, 1.0, it, 0.0, "power")
        resid = float(np.linalg.norm(w - mu * v))
        v = w / nrm
        if resid <= tol:
            lam = sqrt(max(mu, 0.0))
            return SpectrumReport(op.q, op.dim, lam, 1 - lam, it, resid, "power")
    raise ConvergenceError(f"power iteration did not reach tol {tol} in {max_iter} steps",
                           estimate=sqrt(max(mu, 0.0)))


@dataclass
class MultiplicityReport:
    ok: bool
    required: float
    clusters: list[tuple[float, int]]


def cluster_eigenvalues(vals, tol: float = 1e-8) -> list[tuple[float, int]]:
    vals = np.sort(np.asarray(vals))
    out, start = [], 0
    for i in range(1, vals.size + 1):
        if i == vals.size or vals[i] - vals[i - 1] > tol:
            out.append((float(vals[start:i].mean()), i - start))
            start = i
    return out


def multiplicity_check(op: AveragingOperator, p: int, tol: float = 1e-8) -> MultiplicityReport:
    """Every eigenvalue on mean-zero functions has multiplicity >= (p-1)/2."""
    if SquareFreeModulus.of(p).prime_factors != (p,):
        raise PreconditionError(f"{p} is not prime")
    if p > 13:
        raise PreconditionError(f"dense eigensolve limited to p <= 13, got {p}")
    if op.q != p:
        raise PreconditionError(f"operator is mod {op.q}, not mod {p}")
    vals = np.linalg.eigvalsh(op.dense())
    vals = np.delete(vals, int(np.argmin(np.abs(vals - 1.0))))
    clusters = cluster_eigenvalues(vals, tol)
    need = (p - 1) / 2
    return MultiplicityReport(all(c >= need for _, c in clusters), need, clusters)


def generator_measure_norm(op: AveragingOperator) -> float:
    """Counting-measure L2 norm of the generator measure."""
    return float(np.linalg.norm(op.generator_measure()))


def frobenius_bound_check(op: AveragingOperator, p: int) -> tuple[bool, float, float]:
    """Compare every mean-zero eigenvalue with sqrt(2/(p-1)) |mu|_2 |G|^(1/2).

    Returns ``(holds, max_abs_eigenvalue, bound)``.
    """
    vals = np.linalg.eigvalsh(op.dense())
    vals = np.delete(vals, int(np.argmin(np.abs(vals - 1.0))))
    bound = sqrt(2 / (p - 1)) * generator_measure_norm(op) * sqrt(op.dim)
    top = float(np.max(np.abs(vals)))
    return top <= bound, top, bound


# --------------------------------------------------------------------------
# convolution powers


@dataclass
class FlatteningProfile:
    norms: np.ndarray  # norms[l-1] = |mu^(l)|_2
    floor: float  # |G|^(-1/2), the uniform-measure norm


def flattening_profile(S: GeneratorSystem, q, l_max: int, *, op: AveragingOperator | None = None) -> FlatteningProfile:
    """Counting-norm L2 norms of the convolution powers mu^(1..l_max)."""
    if l_max < 1:
        raise PreconditionError("l_max must be >= 1")
    if op is None:
        op = build_cayley_operator(S, q)
    mu = op.generator_measure()
    norms = [np.linalg.norm(mu)]
    for _ in range(l_max - 1):
        # S is symmetric, so convolving with the generator measure is T
        mu = op.apply(mu)
        norms.append(np.linalg.norm(mu))
    return FlatteningProfile(np.array(norms), 1 / sqrt(op.dim))


def flattening_monotone_exact(op: AveragingOperator, l_max: int) -> bool:
    """Whether |mu^(l)|_2 is non-increasing for l = 1..l_max, decided in integers.

    mu^(l) = c_l / m^l with c_l the walk counts, so |mu^(l+1)| <= |mu^(l)|
    iff m^2 |c_l|^2 >= |c_{l+1}|^2.  The float profile cannot settle this
    once it sits at the floor, where consecutive values differ by round-off.
    """
    m = op.perm.shape[0]
    c = np.bincount(op.generator_images, minlength=op.dim).astype(object)
    prev = int(np.dot(c, c))
    for _ in range(l_max - 1):
        # same recursion as flattening_profile, scaled by m
        nxt = c[op.perm[0]]
        for s in range(1, m):
            nxt = nxt + c[op.perm[s]]
        c = nxt
        cur = int(np.dot(c, c))
        if cur > m * m * prev:
            return False
        prev = cur
    return True


def contraction_profile(op: AveragingOperator, phi, l_max: int) -> np.ndarray:
    """Ratios |mu^(l) * phi|_2 / |phi|_2 for l = 1..l_max."""
    phi = np.asarray(phi, dtype=np.float64)
    base = np.linalg.norm(phi)
    out, v = [], phi
    for _ in range(l_max):
        v = op.apply(v)
        out.append(np.linalg.norm(v) / base)
    return np.array(out)


# --------------------------------------------------------------------------
# level decomposition


def _mobius(n: int) -> int:
    f = SquareFreeModulus.of(n).prime_factors
    return -1 if len(f) % 2 else 1


class WalshDecomposition:
    """Splitting of functions on SL2(Z/qZ) by the level at which they are defined.

    ``fiber_mean(phi, d)`` averages phi over the fibres of reduction mod d;
    the level-q1 component is ``sum_{d | q1} mobius(q1/d) fiber_mean(phi, d)``.
    Level 1 is the constant part.
    """

    def __init__(self, group: ResidueGroup):
        if not group.is_full:
            raise PreconditionError("level decomposition needs the full SL2(Z/qZ)")
        self.group = group
        self.modulus = group.modulus
        self._labels: dict[int, np.ndarray] = {}
        for d in self.modulus.divisors():
            r = group.elements % d
            key = ((r[:, 0] * d + r[:, 1]) * d + r[:, 2]) * d + r[:, 3]
            self._labels[d] = np.unique(key, return_inverse=True)[1].ravel()

    @classmethod
    def for_modulus(cls, q) -> "WalshDecomposition":
        return cls(full_sl2(q))

    def fiber_mean(self, phi, d: int) -> np.ndarray:
        """Fibre averages along the last axis (rows of a 2-D array are independent)."""
        lab = self._labels[d]
        cnt = np.bincount(lab)
        if phi.ndim == 1:
            return (np.bincount(lab, weights=phi) / cnt)[lab]
        sums = np.zeros(phi.shape[:-1] + (cnt.size,))
        np.add.at(sums, (..., lab), phi)
        return (sums / cnt)[..., lab]

    def project(self, phi, q1: int) -> np.ndarray:
        if q1 not in self._labels:
            raise PreconditionError(f"{q1} does not divide {self.modulus.q}")
        phi = np.asarray(phi, dtype=np.float64)
        out = np.zeros_like(phi)
        for d in SquareFreeModulus.of(q1).divisors():
            out += _mobius(q1 // d) * self.fiber_mean(phi, d)
        return out

    def components(self, phi) -> dict[int, np.ndarray]:
        return {q1: self.project(phi, q1) for q1 in self.modulus.divisors()}


def walsh_project(phi, q, q1: int) -> np.ndarray:
    return WalshDecomposition.for_modulus(q).project(phi, q1)


def l2_norm(phi, normalized: bool = False) -> float:
    """Counting-measure L2 norm, or the probability-measure norm if ``normalized``."""
    phi = np.asarray(phi, dtype=np.float64)
    s = float(np.sum(phi * phi))
    return sqrt(s / phi.size) if normalized else sqrt(s)


def indicator_level_bound(q, q1: int) -> float:
    """|SL2(q1)|^(1/2) / |SL2(q)|, the normalized-norm bound for a point indicator."""
    return sqrt(sl2_order(q1)) / sl2_order(q)
