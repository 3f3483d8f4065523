"""Reduction modulo square-free q, closures Lambda_q, and strong-approximation scans."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import gcd, prod

import numpy as np

from . import _kernels
from .errors import PreconditionError
from .hyperbolic import GeneratorSystem, Mat2Z


def _factor(n: int) -> list[int]:
    out, p = [], 2
    while p * p <= n:
        while n % p == 0:
            out.append(p)
            n //= p
        p += 1 if p == 2 else 2
    if n > 1:
        out.append(n)
    return out


def primes_up_to(n: int) -> list[int]:
    if n < 2:
        return []
    sieve = np.ones(n + 1, dtype=bool)
    sieve[:2] = False
    for p in range(2, int(n**0.5) + 1):
        if sieve[p]:
            sieve[p * p :: p] = False
    return np.nonzero(sieve)[0].tolist()


@dataclass(frozen=True)
class SquareFreeModulus:
    q: int
    prime_factors: tuple[int, ...]

    @classmethod
    def of(cls, q) -> "SquareFreeModulus":
        if isinstance(q, SquareFreeModulus):
            return q
        if isinstance(q, bool) or int(q) != q or q < 1:
            raise PreconditionError(f"modulus must be a positive integer, got {q!r}")
        q = int(q)
        f = _factor(q)
        if len(set(f)) != len(f):
            raise PreconditionError(f"modulus {q} is not square-free")
        return cls(q, tuple(f))

    def divisors(self) -> list[int]:
        divs = [1]
        for p in self.prime_factors:
            divs += [d * p for d in divs]
        return sorted(divs)

    def __int__(self):
        return self.q


@dataclass(frozen=True)
class ModMat2:
    a: int
    b: int
    c: int
    d: int
    q: int

    def __post_init__(self):
        if (self.a * self.d - self.b * self.c - 1) % self.q:
            raise PreconditionError(f"{self.as_tuple()} has det != 1 mod {self.q}")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.a, self.b, self.c, self.d)

    def __matmul__(self, other: "ModMat2") -> "ModMat2":
        if other.q != self.q:
            raise PreconditionError("moduli differ")
        a, b, c, d = self.as_tuple()
        e, f, g, h = other.as_tuple()
        q = self.q
        return ModMat2((a * e + b * g) % q, (a * f + b * h) % q, (c * e + d * g) % q, (c * f + d * h) % q, q)


def reduce_mod(g: Mat2Z, q) -> ModMat2:
    q = SquareFreeModulus.of(q).q
    return ModMat2(g.a % q, g.b % q, g.c % q, g.d % q, q)


# --------------------------------------------------------------------------
# group orders


@lru_cache(maxsize=None)
def _sl2_prime_count(p: int) -> int:
    """Number of (a, b, c, d) in F_p^4 with ad - bc = 1, by exhaustive histogram.

    Every pair (a, d) and every pair (b, c) is visited once; the quadruple
    count is the inner product of the two residue histograms.
    """
    r = np.arange(p, dtype=np.int64)
    prods = (r[:, None] * r[None, :]) % p
    hist_bc = np.bincount(prods.ravel(), minlength=p)
    hist_ad = np.bincount(((prods - 1) % p).ravel(), minlength=p)
    return int(hist_bc @ hist_ad)


def sl2_order_closed_form(q) -> int:
    m = SquareFreeModulus.of(q)
    return prod(p * (p * p - 1) for p in m.prime_factors)


def sl2_order(q) -> int:
    """|SL2(Z/qZ)| as a CRT product of per-prime exhaustive counts."""
    m = SquareFreeModulus.of(q)
    order = prod(_sl2_prime_count(p) for p in m.prime_factors)
    assert order == sl2_order_closed_form(m), "exhaustive count disagrees with p(p^2-1)"
    return order


# --------------------------------------------------------------------------
# residue groups


@dataclass(frozen=True)
class ResidueGroup:
    """An explicit subgroup of SL2(Z/qZ), elements sorted lexicographically.

    ``elements[k]`` has dense index ``k``; :meth:`index_of` inverts that map.
    """

    modulus: SquareFreeModulus
    elements: np.ndarray
    keys: np.ndarray = field(repr=False)
    is_full: bool

    @property
    def q(self) -> int:
        return self.modulus.q

    @property
    def size(self) -> int:
        return int(self.elements.shape[0])

    def __len__(self):
        return self.size

    def encode(self, rows) -> np.ndarray:
        q = self.q
        rows = np.asarray(rows, dtype=np.int64) % q
        return ((rows[..., 0] * q + rows[..., 1]) * q + rows[..., 2]) * q + rows[..., 3]

    def index_of(self, rows) -> np.ndarray:
        """Dense indices of the given entry rows (reduced mod q first).

        Raises if any row is not in the group.
        """
        k = self.encode(rows)
        idx = np.searchsorted(self.keys, k)
        idx = np.minimum(idx, self.size - 1)
        if not np.all(self.keys[idx] == k):
            raise PreconditionError("element not in residue group")
        return idx

    def contains(self, rows) -> np.ndarray:
        k = self.encode(rows)
        idx = np.minimum(np.searchsorted(self.keys, k), self.size - 1)
        return self.keys[idx] == k

    def identity_index(self) -> int:
        return int(self.index_of([1, 0, 0, 1]))

    def left_perm(self, g) -> np.ndarray:
        """``perm[x] = index(g @ elements[x])``."""
        g = np.asarray(g, dtype=np.int64).reshape(1, 4) % self.q
        cand, _, _ = _kernels.expand_frontier(self.elements, g, np.iinfo(np.int64).max)
        return self.index_of(cand)

    def inverse_indices(self) -> np.ndarray:
        E = self.elements
        inv = np.stack([E[:, 3], -E[:, 1], -E[:, 2], E[:, 0]], axis=1)
        return self.index_of(inv)

    def reduction_indices(self, d: int, target: "ResidueGroup") -> np.ndarray:
        """Index in ``target`` (a group mod ``d``) of each element reduced mod ``d``."""
        if self.q % d:
            raise PreconditionError(f"{d} does not divide {self.q}")
        return target.index_of(self.elements % d)


def _group_from_rows(m: SquareFreeModulus, rows: np.ndarray) -> ResidueGroup:
    q = m.q
    keys = ((rows[:, 0] * q + rows[:, 1]) * q + rows[:, 2]) * q + rows[:, 3]
    order = np.argsort(keys, kind="stable")
    rows, keys = rows[order], keys[order]
    return ResidueGroup(m, rows, keys, int(rows.shape[0]) == sl2_order(m))


@lru_cache(maxsize=64)
def _closure_cached(gens: tuple, q: int) -> ResidueGroup:
    m = SquareFreeModulus.of(q)
    rows = _kernels.closure_bfs(np.array(gens, dtype=np.int64).reshape(-1, 4), q)
    return _group_from_rows(m, rows)


def closure_mod_q(S: GeneratorSystem, q) -> ResidueGroup:
    """Lambda_q: BFS closure of the reduced generators under multiplication."""
    m = SquareFreeModulus.of(q)
    gens = tuple(v for g in S.generators for v in g.as_tuple())
    return _closure_cached(gens, m.q)


SL2Z_GENERATORS = ((1, 1, 0, 1), (1, 0, 1, 1))


def full_sl2(q) -> ResidueGroup:
    """SL2(Z/qZ) itself, as the reduction of SL2(Z)."""
    return closure_mod_q(GeneratorSystem.from_base(SL2Z_GENERATORS), q)


@dataclass
class BadPrimeReport:
    prime_bound: int
    bad: set[int]
    rows: list[tuple[int, int, int, bool]]  # (p, closure_size, sl2_order, is_full)

    def excludes(self, q: int) -> bool:
        return any(q % p == 0 for p in self.bad)


def strong_approximation_scan(S: GeneratorSystem, prime_bound: int = 100) -> BadPrimeReport:
    """Primes p <= bound at which Lambda_p is a proper subgroup of SL2(F_p).

    The report is only as complete as the scanned range.
    """
    rows = []
    for p in primes_up_to(prime_bound):
        G = closure_mod_q(S, p)
        rows.append((p, G.size, sl2_order(p), G.is_full))
    return BadPrimeReport(prime_bound, {p for p, _, _, full in rows if not full}, rows)


def crt_surjectivity_check(S: GeneratorSystem, q1, q2) -> bool:
    """``|Lambda_{q1 q2}| == |Lambda_{q1}| * |Lambda_{q2}|`` (Goursat criterion)."""
    m1, m2 = SquareFreeModulus.of(q1), SquareFreeModulus.of(q2)
    if gcd(m1.q, m2.q) != 1:
        raise PreconditionError(f"moduli {m1.q} and {m2.q} are not coprime")
    m12 = SquareFreeModulus.of(m1.q * m2.q)
    return closure_mod_q(S, m12).size == closure_mod_q(S, m1).size * closure_mod_q(S, m2).size
