"""Sieving orbit values ``|f(g)|`` for g in a norm ball.

Ground truth is always the exact count on the enumerated ball; the
combinatorial sieve bounds are compared against it.
"""

from __future__ import annotations

import ast
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import reduce

import numpy as np

from . import _kernels
from .congruence import SquareFreeModulus, _factor, closure_mod_q, primes_up_to, strong_approximation_scan
from .errors import PreconditionError
from .hyperbolic import Ball, GeneratorSystem, Mat2Z, enumerate_ball

VARIABLES = ("x11", "x12", "x21", "x22")
_ALLOWED = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Add, ast.Sub, ast.Mult, ast.Pow,
            ast.USub, ast.UAdd, ast.Constant, ast.Name, ast.Load)
INT64_MAX = 2**63 - 1


# --------------------------------------------------------------------------
# polynomials


def _validate(node):
    for sub in ast.walk(node):
        if not isinstance(sub, _ALLOWED):
            raise PreconditionError(f"unsupported syntax in polynomial: {type(sub).__name__}")
        if isinstance(sub, ast.Constant) and (isinstance(sub.value, bool) or not isinstance(sub.value, int)):
            raise PreconditionError(f"coefficients must be integers, got {sub.value!r}")
        if isinstance(sub, ast.Name) and sub.id not in VARIABLES:
            raise PreconditionError(f"unknown variable {sub.id!r}; use x11, x12, x21, x22")
        if isinstance(sub, ast.BinOp) and isinstance(sub.op, ast.Pow):
            if not (isinstance(sub.right, ast.Constant) and isinstance(sub.right.value, int) and sub.right.value >= 0):
                raise PreconditionError("exponents must be non-negative integer literals")


def _product_factors(node) -> list:
    if isinstance(node, ast.BinOp) and isinstance(node.op, ast.Mult):
        return _product_factors(node.left) + _product_factors(node.right)
    return [node]


@dataclass(frozen=True)
class OrbitPolynomial:
    """Integer polynomial in the matrix entries, divided by ``normalization``.

    ``t`` is the user-declared number of irreducible factors.  ``factors``
    holds the top-level product factors of the expression text when their
    number equals ``t``, otherwise the whole expression.
    """

    text: str
    t: int
    normalization: int = 1
    _code: object = field(default=None, repr=False, compare=False)
    factors: tuple[str, ...] = ()

    @classmethod
    def parse(cls, text: str, t: int = 1, normalization: int = 1) -> "OrbitPolynomial":
        try:
            tree = ast.parse(text.strip(), mode="eval")
        except SyntaxError as exc:
            raise PreconditionError(f"cannot parse polynomial {text!r}: {exc.msg}") from None
        _validate(tree)
        if t < 1:
            raise PreconditionError("t must be >= 1")
        factors = tuple(ast.unparse(f) for f in _product_factors(tree.body))
        if len(factors) != t:
            factors = (text.strip(),)
        code = compile(tree, "<polynomial>", "eval")
        return cls(text.strip(), int(t), int(normalization), code, factors)

    def raw(self, x11, x12, x21, x22):
        return eval(self._code, {"__builtins__": {}}, {"x11": x11, "x12": x12, "x21": x21, "x22": x22})

    def __call__(self, x11, x12, x21, x22):
        v = self.raw(x11, x12, x21, x22)
        return v // self.normalization if self.normalization != 1 else v

    def factor_polys(self) -> list["OrbitPolynomial"]:
        return [OrbitPolynomial.parse(f) for f in self.factors]

    def with_normalization(self, n: int) -> "OrbitPolynomial":
        return OrbitPolynomial.parse(self.text, self.t, n)


def eval_poly(f: OrbitPolynomial, g: Mat2Z) -> int:
    return int(f(*g.as_tuple()))


def eval_on_rows(f: OrbitPolynomial, rows: np.ndarray) -> np.ndarray:
    """Exact values on an (n, 4) array; returns int64 when every value fits, else object."""
    obj = np.asarray(rows).astype(object)
    vals = f(obj[:, 0], obj[:, 1], obj[:, 2], obj[:, 3])
    vals = np.asarray(vals, dtype=object).reshape(-1)
    if vals.size == 0:
        return np.zeros(0, dtype=np.int64)
    if max(abs(int(v)) for v in (vals.max(), vals.min())) <= INT64_MAX:
        return vals.astype(np.int64)
    return vals


def _gcd_all(values) -> int:
    return reduce(math.gcd, (abs(int(v)) for v in values), 0)


def normalize_primitive(f: OrbitPolynomial, sample: np.ndarray, check_sample: np.ndarray | None = None) -> OrbitPolynomial:
    """Divide f by the gcd of its values on the orbit sample (at least 1000 points).

    Primitivity of the result is re-checked on ``check_sample`` when given.
    """
    sample = np.asarray(sample)
    if sample.shape[0] < 1000:
        raise PreconditionError(f"need >= 1000 orbit points, got {sample.shape[0]}")
    raw = f.with_normalization(1)
    n = _gcd_all(eval_on_rows(raw, sample))
    if n == 0:
        raise PreconditionError(f"{f.text} vanishes on the whole sample")
    g = f.with_normalization(n)
    if check_sample is not None and _gcd_all(eval_on_rows(g, check_sample)) != 1:
        raise PreconditionError(f"{f.text} / {n} is not primitive on the check sample")
    return g


# --------------------------------------------------------------------------
# local densities


def _zero_count_mod_p(S: GeneratorSystem, f: OrbitPolynomial, p: int) -> tuple[int, int]:
    G = closure_mod_q(S, p)
    vals = eval_on_rows(f.with_normalization(1), G.elements)
    zeros = sum(1 for v in vals.tolist() if v % p == 0) if vals.dtype == object else int(np.count_nonzero(vals % p == 0))
    return zeros, G.size


def local_density(S: GeneratorSystem, f: OrbitPolynomial, d) -> Fraction:
    """beta(d) = |{g in Lambda_d : f(g) = 0 mod d}| / |Lambda_d|, per prime and multiplied."""
    m = SquareFreeModulus.of(d)
    beta = Fraction(1)
    for p in m.prime_factors:
        if f.normalization % p == 0:
            raise PreconditionError(f"prime {p} divides the normalization {f.normalization}")
        z, n = _zero_count_mod_p(S, f, p)
        beta *= Fraction(z, n)
    return beta


def local_density_direct(S: GeneratorSystem, f: OrbitPolynomial, d) -> Fraction:
    """Same density counted on the closure mod d itself (CRT cross-check)."""
    m = SquareFreeModulus.of(d)
    G = closure_mod_q(S, m)
    vals = eval_on_rows(f.with_normalization(1), G.elements)
    zeros = sum(1 for v in vals.tolist() if int(v) % m.q == 0)
    return Fraction(zeros, G.size)


# --------------------------------------------------------------------------
# sequences


def _mobius_omega(d_primes):
    return (-1) ** len(d_primes), len(d_primes)


@dataclass
class SieveSequence:
    """Weights a_n of the values |f(g)|, g in the ball, with progression sums for d | P_z."""

    T: float
    f: OrbitPolynomial
    X: int
    values: np.ndarray  # |f(g)| per ball element (int64 or object)
    excluded: frozenset[int]  # B: bad primes and primes dividing the normalization
    z: float
    D: float
    primes: tuple[int, ...]  # sifting primes p <= z outside B
    sums: dict[int, int]  # d -> #{g : f(g) = 0 mod d}
    beta: dict[int, Fraction]

    @property
    def P(self) -> int:
        return math.prod(self.primes)

    def remainder(self, d: int) -> Fraction:
        return self.sums[d] - self.beta[d] * self.X

    def remainder_total(self) -> Fraction:
        return sum((abs(self.remainder(d)) for d in self.sums), Fraction(0))

    @property
    def zero_count(self) -> int:
        return int(np.count_nonzero(self.values == 0))


def excluded_primes(S: GeneratorSystem, f: OrbitPolynomial, bound: int) -> frozenset[int]:
    bad = strong_approximation_scan(S, bound).bad
    return frozenset(bad | set(_factor(f.normalization)))


def _divisor_subsets(primes, D):
    """(d, prime tuple) for square-free d | prod(primes) with d <= D."""
    out = [(1, ())]
    for p in primes:
        out += [(d * p, ps + (p,)) for d, ps in out if d * p <= D]
    return sorted(out)


def progression_sums(S: GeneratorSystem, f: OrbitPolynomial, T: float, D: float, z: float, *,
                     ball: Ball | None = None, scan_bound: int = 100, **kw) -> SieveSequence:
    """Exact ``#{g in ball : f(g) = 0 mod d}`` for every square-free d | P_z with d <= D.

    Zeros of f count in X and in every progression, so inclusion-exclusion
    over these sums reproduces the sifted sum exactly.
    """
    if ball is None:
        ball = enumerate_ball(S, T, **kw)
    vals = eval_on_rows(f, ball.elements)
    vals = np.abs(vals)
    B = excluded_primes(S, f, max(scan_bound, int(z)))
    primes = tuple(p for p in primes_up_to(int(math.floor(z))) if p not in B)
    # bit j of sig is set when primes[j] divides f(g)
    sig = np.zeros(vals.shape[0], dtype=np.int64)
    for j, p in enumerate(primes):
        hit = (vals % p == 0) if vals.dtype != object else np.array([int(v) % p == 0 for v in vals])
        sig |= hit.astype(np.int64) << j
    sigs, mult = np.unique(sig, return_counts=True)
    sums, beta = {}, {}
    for d, ps in _divisor_subsets(primes, D):
        mask = sum(1 << primes.index(p) for p in ps)
        sums[d] = int(mult[(sigs & mask) == mask].sum())
        beta[d] = local_density(S, f, d)
    return SieveSequence(float(T), f, len(ball), vals, B, float(z), float(D), primes, sums, beta)


def exact_sifted_sum(seq: SieveSequence) -> int:
    """#{g : gcd(|f(g)|, P_z) = 1}, straight from the values."""
    P = seq.P
    if seq.values.dtype == object:
        return sum(1 for v in seq.values.tolist() if math.gcd(int(v), P) == 1)
    return int(np.count_nonzero(np.gcd(seq.values, P) == 1))


def predicted_main_term(seq: SieveSequence) -> Fraction:
    return seq.X * math.prod((1 - local_density_cached(seq, p) for p in seq.primes), start=Fraction(1))


def local_density_cached(seq: SieveSequence, p: int) -> Fraction:
    return seq.beta[p] if p in seq.beta else Fraction(0)


@dataclass
class SieveBounds:
    lower: Fraction
    upper: Fraction
    k_lower: int
    k_upper: int
    s: float


def _max_level_exponent(z: float, D: float) -> int:
    """Largest k with z^k <= D, in exact arithmetic."""
    zf, Df = Fraction(z), Fraction(D)
    k = 0
    while zf ** (k + 1) <= Df:
        k += 1
        if k > 10_000:
            break
    return k


def fundamental_lemma_bounds(seq: SieveSequence, t: int | None = None) -> SieveBounds:
    """Truncated inclusion-exclusion (Brun) bounds for the sifted sum.

    With k even (odd) the truncation at omega(d) <= k over-(under-)counts.
    Replacing each progression sum by ``beta(d) X + r(d)`` and each ``r(d)`` by
    ``+-|r(d)|`` keeps the bounds valid.  Truncation depth is
    ``min(ceil(9t) + 1, k_D)`` where ``z^{k_D} <= D``, so every d used
    satisfies d <= D.
    """
    t = seq.f.t if t is None else t
    z, D = seq.z, seq.D
    if z < 2 or not seq.primes:
        return SieveBounds(Fraction(seq.X), Fraction(seq.X), 0, 0, math.inf)
    s = math.log(D) / math.log(z)
    if not s > 9 * t:
        raise PreconditionError(f"level too small: s = log D / log z = {s:.6g} must exceed 9t = {9 * t}")
    k_max = min(math.ceil(9 * t) + 1, _max_level_exponent(z, D))
    k_up = k_max - (k_max % 2)
    k_lo = k_max if k_max % 2 else k_max - 1

    def bound(k, sign):
        main, err = Fraction(0), Fraction(0)
        for d, ps in _divisor_subsets(seq.primes, D):
            mu, om = _mobius_omega(ps)
            if om > k:
                continue
            main += mu * seq.beta[d]
            err += abs(seq.remainder(d))
        return seq.X * main + sign * err

    return SieveBounds(bound(k_lo, -1), bound(k_up, +1), k_lo, k_up, s)


@dataclass
class DimensionCheck:
    defect: float
    n_primes: int
    degenerate: bool


def dimension_check(densities: dict[int, Fraction], w: float, z: float, t: int) -> DimensionCheck:
    """``|sum_{w <= p <= z} beta(p) log p - t log(z / w)|``."""
    ps = [p for p in densities if w <= p <= z]
    total = sum(float(densities[p]) * math.log(p) for p in ps)
    return DimensionCheck(abs(total - t * math.log(z / w)), len(ps), not ps)


def prime_densities(S: GeneratorSystem, f: OrbitPolynomial, w: float, z: float, *, excluded=frozenset()) -> dict[int, Fraction]:
    return {p: local_density(S, f, p) for p in primes_up_to(int(z)) if p >= w and p not in excluded}


# --------------------------------------------------------------------------
# almost primes


@dataclass
class AlmostPrimeTable:
    by_omega: dict[int, int]  # r -> #{|f| >= 2 with exactly r prime factors}
    small: int  # #{f in {0, +-1}}
    zeros: int
    units: int
    unresolved: int  # values too large to factor deterministically

    @property
    def total(self) -> int:
        return sum(self.by_omega.values()) + self.small + self.unresolved

    def at_most(self, r: int) -> tuple[int, int]:
        """Bracket for #{g : |f(g)| has <= r prime factors}, zeros excluded."""
        base = self.units + sum(c for k, c in self.by_omega.items() if k <= r)
        return base, base + self.unresolved


def almost_prime_table(values) -> AlmostPrimeTable:
    vals = np.asarray(values)
    if vals.dtype == object:
        big = np.array([abs(int(v)) > INT64_MAX for v in vals.tolist()], dtype=bool)
        small_vals = np.array([abs(int(v)) for v, b in zip(vals.tolist(), big) if not b], dtype=np.int64)
    else:
        big = np.zeros(vals.shape, dtype=bool)
        small_vals = np.abs(vals.astype(np.int64))
    zeros = int(np.count_nonzero(small_vals == 0))
    units = int(np.count_nonzero(small_vals == 1))
    rest = small_vals[small_vals >= 2]
    om = _kernels.bigomega(rest)
    r, c = np.unique(om, return_counts=True)
    return AlmostPrimeTable({int(a): int(b) for a, b in zip(r, c)}, zeros + units, zeros, units, int(big.sum()))


def almost_prime_count(values, r: int) -> int:
    lo, hi = almost_prime_table(values).at_most(r)
    if lo != hi:
        raise PreconditionError(f"{hi - lo} values could not be factored; count lies in [{lo}, {hi}]")
    return lo


def prime_count(S: GeneratorSystem, f: OrbitPolynomial, T: float, *, ball: Ball | None = None) -> int:
    """#{g in ball : every declared factor |f_j(g)| is prime}."""
    if ball is None:
        ball = enumerate_ball(S, T)
    ok = np.ones(len(ball), dtype=bool)
    for fj in f.factor_polys():
        v = np.abs(eval_on_rows(fj, ball.elements))
        if v.dtype == object:
            raise PreconditionError("factor values exceed 64 bits")
        ok &= _kernels.bigomega(v) == 1
    return int(ok.sum())


@dataclass
class SieveReport:
    seq: SieveSequence
    exact: int
    main_term: Fraction
    bounds: SieveBounds | None
    table: AlmostPrimeTable
    a2_defect: DimensionCheck
    note: str = ""


def run_sieve(S: GeneratorSystem, f: OrbitPolynomial, T: float, z: float, D: float, *, ball: Ball | None = None,
              **kw) -> SieveReport:
    seq = progression_sums(S, f, T, D, z, ball=ball, **kw)
    note = ""
    try:
        bounds = fundamental_lemma_bounds(seq)
    except PreconditionError as exc:
        bounds, note = None, str(exc)
    dens = {p: seq.beta[p] for p in seq.primes}
    return SieveReport(seq, exact_sifted_sum(seq), predicted_main_term(seq), bounds,
                       almost_prime_table(seq.values), dimension_check(dens, 2, max(z, 2), f.t), note)
