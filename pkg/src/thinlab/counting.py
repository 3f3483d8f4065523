"""Orbit counts in balls, exponent fits, the renewal recursion, and congruence classes."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate

from .congruence import ResidueGroup, SquareFreeModulus, closure_mod_q
from .errors import HorizonError, PreconditionError
from .hyperbolic import Ball, GeneratorSystem, Mat2Z, UpperHalfPoint, _mul, enumerate_ball, hyp_distance, mobius_act, norm_sq_bound

ORIGIN = UpperHalfPoint(0.0, 1.0)


def geometric_ladder(t_min: float, t_max: float, ratio: float) -> np.ndarray:
    """``t_min, t_min r, t_min r^2, ...`` up to and including ``t_max``."""
    if not (t_min > 0 and t_max >= t_min and ratio > 1):
        raise PreconditionError("need 0 < t_min <= t_max and ratio > 1")
    n = int(math.floor(math.log(t_max / t_min) / math.log(ratio) + 1e-12))
    ladder = t_min * ratio ** np.arange(n + 1)
    if ladder[-1] < t_max * (1 - 1e-12):
        ladder = np.append(ladder, t_max)
    return ladder


def distance_variable(T) -> np.ndarray:
    """``a`` with ``cosh a = T^2 / 2``, the distance matching the norm bound (nan below sqrt 2)."""
    T = np.asarray(T, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        return np.where(T * T >= 2, np.arccosh(np.maximum(T * T / 2, 1.0)), np.nan)


def ball_distances(ball: Ball) -> np.ndarray:
    """``d(i, g i)`` for every ball element."""
    return np.arccosh(np.asarray(ball.norm_sq, dtype=np.float64) / 2.0)


@dataclass
class BallCountSeries:
    T: np.ndarray
    counts: np.ndarray
    a: np.ndarray
    partial: bool = False


def counts_from_ball(ball: Ball, ladder) -> np.ndarray:
    ns = np.sort(np.asarray(ball.norm_sq, dtype=object if ball.elements.dtype == object else np.int64))
    bounds = [norm_sq_bound(T) for T in ladder]
    if bounds and bounds[-1] > ball.max_norm_sq:
        raise HorizonError(f"ladder reaches norm^2 {bounds[-1]} beyond the enumerated {ball.max_norm_sq}")
    if ns.dtype == object:
        import bisect

        lst = ns.tolist()
        return np.array([bisect.bisect_right(lst, b) for b in bounds], dtype=np.int64)
    return np.searchsorted(ns, np.array(bounds, dtype=np.int64), side="right").astype(np.int64)


def orbit_count(S: GeneratorSystem, ladder, *, budget: int | None = None, workers: int = 1) -> BallCountSeries:
    """Exact ``N(T)`` along an increasing ladder from a single enumeration."""
    ladder = np.asarray(ladder, dtype=np.float64)
    if ladder.size == 0 or np.any(np.diff(ladder) <= 0):
        raise PreconditionError("ladder must be non-empty and strictly increasing")
    ball = enumerate_ball(S, float(ladder[-1]), budget=budget, workers=workers)
    return BallCountSeries(ladder, counts_from_ball(ball, ladder), distance_variable(ladder))


@dataclass
class ExponentFit:
    slope: float
    intercept: float
    max_residual: float
    n_points: int

    @property
    def delta(self) -> float:
        return self.slope / 2


def exponent_fit(T, counts=None, *, burn_in: float = 0.2) -> ExponentFit:
    """Least-squares line through ``(log T, log N)`` for T past the burn-in percentile.

    Accepts a :class:`BallCountSeries` or two arrays.
    """
    if isinstance(T, BallCountSeries):
        T, counts = T.T, T.counts
    T = np.asarray(T, dtype=np.float64)
    N = np.asarray(counts, dtype=np.float64)
    keep = (T >= np.percentile(T, 100 * burn_in)) & (N > 0)
    if keep.sum() < 5:
        raise PreconditionError(f"need >= 5 ladder points past burn-in, have {int(keep.sum())}")
    x, y = np.log(T[keep]), np.log(N[keep])
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    return ExponentFit(float(slope), float(icpt), float(np.max(np.abs(resid))), int(keep.sum()))


# --------------------------------------------------------------------------
# congruence classes


@dataclass
class CongruenceCountTable:
    q: int
    group: ResidueGroup
    counts: np.ndarray  # counts[k] for group element k
    total: int

    @property
    def classes_hit(self) -> int:
        return int(np.count_nonzero(self.counts))

    def relative_deviation(self) -> np.ndarray:
        return self.counts * self.group.size / self.total - 1.0

    @property
    def max_deviation(self) -> float:
        return float(np.max(np.abs(self.relative_deviation())))

    @property
    def l2_deviation(self) -> float:
        return float(np.sqrt(np.mean(self.relative_deviation() ** 2)))


def require_good_modulus(S: GeneratorSystem, q) -> SquareFreeModulus:
    m = SquareFreeModulus.of(q)
    for p in m.prime_factors:
        if not closure_mod_q(S, p).is_full:
            raise PreconditionError(f"modulus {m.q} shares the bad prime {p}")
    return m


def class_indices(ball: Ball, group: ResidueGroup) -> np.ndarray:
    rows = ball.elements
    if rows.dtype == object:
        rows = np.array([[int(v) % group.q for v in r] for r in rows], dtype=np.int64).reshape(-1, 4)
    return group.index_of(rows)


def congruence_count(S: GeneratorSystem, T: float, q, *, ball: Ball | None = None, **kw) -> CongruenceCountTable:
    """Exact ball counts split by residue class mod q."""
    m = require_good_modulus(S, q)
    group = closure_mod_q(S, m)
    if ball is None:
        ball = enumerate_ball(S, T, **kw)
    elif ball.max_norm_sq != norm_sq_bound(T):
        raise PreconditionError("supplied ball was enumerated to a different T")
    counts = np.bincount(class_indices(ball, group), minlength=group.size)
    return CongruenceCountTable(m.q, group, counts, len(ball))


# --------------------------------------------------------------------------
# renewal recursion


class RenewalCounter:
    """Word sums ``N(a, x) = #{y : yx admissible, d(o, yx w) - d(o, x w) <= a}``.

    Words are in shift order (leftmost letter acts last) and are extended by
    prepending letters.  Distances are cached per word, so both sides of the
    renewal identity read the same numbers.  Pruning stops at a word whose
    excess exceeds ``a``; that is exact when prepending a letter never brings
    the orbit point closer to ``o``, which is checked on every explored edge.
    """

    def __init__(self, S: GeneratorSystem, w=None, o=ORIGIN, max_length: int = 60):
        self.S = S
        self.w = ORIGIN if w is None else w
        self.o = o
        self.max_length = max_length
        self._mat: dict[tuple, tuple] = {(): (1, 0, 0, 1)}
        self._dist: dict[tuple, float] = {}
        self.growth_violations: list[tuple] = []

    def matrix(self, word: tuple) -> tuple:
        if word not in self._mat:
            self._mat[word] = _mul(self.S.generators[word[0]].as_tuple(), self.matrix(word[1:]))
        return self._mat[word]

    def dist(self, word: tuple) -> float:
        if word not in self._dist:
            self._dist[word] = hyp_distance(self.o, mobius_act(Mat2Z(*self.matrix(word)), self.w))
        return self._dist[word]

    def tau(self, word: tuple) -> float:
        """Finite-word cocycle ``d(o, x w) - d(o, x[1:] w)``."""
        return self.dist(word) - self.dist(word[1:])

    def predecessors(self, word: tuple) -> list[tuple]:
        if not word:
            return [(i,) for i in range(self.S.size)]
        return [(i,) + word for i in range(self.S.size) if self.S.transition[i, word[0]]]

    def count(self, a: float, x: tuple, phi=None) -> int | float:
        x = tuple(x)
        if a < 0:
            return 0
        base = self.dist(x)
        total = 0
        stack = [x]
        while stack:
            v = stack.pop()
            if self.dist(v) - base > a:
                continue
            total += 1 if phi is None else phi(v)
            if len(v) >= self.max_length:
                raise HorizonError(f"word of length {len(v)} still inside radius {a}; raise max_length")
            for u in self.predecessors(v):
                if self.dist(u) < self.dist(v):
                    self.growth_violations.append(u)
                stack.append(u)
        if self.growth_violations:
            raise PreconditionError(f"prepending moved closer to o at {self.growth_violations[0]}; pruning invalid")
        return total


@dataclass
class RenewalResult:
    a: float
    x: tuple
    lhs: int | float
    rhs: int | float

    @property
    def residual(self):
        return self.lhs - self.rhs


def renewal_identity_check(S: GeneratorSystem, a: float, x=(), phi=None, *, counter: RenewalCounter | None = None,
                           max_length: int = 60) -> RenewalResult:
    """Both sides of ``N(a,x) = sum_{sigma x' = x} N(a - tau(x'), x') + phi(x) 1[a >= 0]``."""
    c = counter or RenewalCounter(S, max_length=max_length)
    x = tuple(x)
    lhs = c.count(a, x, phi)
    rhs = sum(c.count(a - c.tau(xp), xp, phi) for xp in c.predecessors(x))
    if a >= 0:
        rhs += 1 if phi is None else phi(x)
    return RenewalResult(a, x, lhs, rhs)


# --------------------------------------------------------------------------
# smoothing


def _bump(t):
    t = np.asarray(t, dtype=np.float64)
    out = np.zeros_like(t)
    inside = np.abs(t) < 0.5
    out[inside] = np.exp(-1.0 / (1.0 - 4.0 * t[inside] ** 2))
    return out


@lru_cache(maxsize=1)
def _bump_mass() -> float:
    return integrate.quad(lambda t: float(_bump(t)), -0.5, 0.5, epsabs=1e-14, epsrel=1e-13)[0]


class SmoothingKernel:
    """``k_gamma(t) = K(t / gamma) / gamma`` with K the unit-mass bump on [-1/2, 1/2]."""

    def __init__(self, gamma: float):
        if not gamma > 0:
            raise PreconditionError("kernel width must be positive")
        self.gamma = float(gamma)

    def K(self, t):
        return _bump(t) / _bump_mass()

    def __call__(self, t):
        return self.K(np.asarray(t) / self.gamma) / self.gamma

    def mass(self) -> float:
        g = self.gamma
        return integrate.quad(lambda t: float(self(t)), -g / 2, g / 2, epsabs=1e-14, epsrel=1e-13)[0]

    def cdf_unit(self, u: float) -> float:
        """``int_{-1/2}^{u} K``."""
        if u <= -0.5:
            return 0.0
        if u >= 0.5:
            return 1.0
        return integrate.quad(lambda t: float(self.K(t)), -0.5, u, epsabs=1e-14, epsrel=1e-13)[0]


def smoothed_from_distances(dists, kernel: SmoothingKernel, a: float) -> float:
    """``int k_gamma(t) N(a + t) dt`` for the step function with jumps at ``dists``."""
    g = kernel.gamma
    d = np.asarray(dists, dtype=np.float64)
    below = int(np.count_nonzero(d <= a - g / 2))
    window = d[(d > a - g / 2) & (d < a + g / 2)]
    return below + sum(1.0 - kernel.cdf_unit((dj - a) / g) for dj in window)


def smoothed_count(S: GeneratorSystem, kernel: SmoothingKernel, a: float, q=1, xi=None, *,
                   ball: Ball | None = None) -> float:
    """Smoothed count of orbit points with ``d(i, g i) <= a + t``, optionally in one class mod q."""
    need = 2 * math.cosh(a + kernel.gamma / 2)
    if ball is None:
        ball = enumerate_ball(S, max_norm_sq=math.floor(need))
    elif ball.max_norm_sq < math.floor(need):  # norms are integers
        raise HorizonError(f"ball enumerated to norm^2 {ball.max_norm_sq}, window needs {need:.6g}")
    d = ball_distances(ball)
    m = SquareFreeModulus.of(q)
    if m.q > 1:
        if xi is None:
            raise PreconditionError("a residue class xi is required when q > 1")
        require_good_modulus(S, m)
        group = closure_mod_q(S, m)
        target = int(group.index_of(np.asarray(xi, dtype=np.int64).reshape(4)))
        d = d[class_indices(ball, group) == target]
    return smoothed_from_distances(d, kernel, a)


def distance_count(dists, a: float) -> int:
    return int(np.count_nonzero(np.asarray(dists) <= a))
