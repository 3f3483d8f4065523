"""Exact 2x2 integer matrices, upper half-plane geometry, and ball enumeration.

Conventions used throughout the package:

* A word ``(i1, ..., in)`` is a tuple of generator indices in *application
  order*; it evaluates to ``g[in] @ ... @ g[i1]``.
* Generators are stored in inverse pairs ``(g1, g1^-1, g2, g2^-1, ...)`` so the
  inverse of letter ``i`` is ``i ^ 1``.
* The base point of the upper half-plane is ``i``; by the identity
  ``|g|^2 = 4 u(g i, i) + 2`` the Frobenius norm and ``rho(i, g i)`` determine
  each other (``cosh rho = |g|^2 / 2``).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .errors import BudgetExceeded, PreconditionError


@dataclass(frozen=True, slots=True)
class Mat2Z:
    """Integer matrix ``[[a, b], [c, d]]`` with determinant exactly 1."""

    a: int
    b: int
    c: int
    d: int

    def __post_init__(self):
        for name in ("a", "b", "c", "d"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                raise TypeError(f"entry {name} must be an integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if self.a * self.d - self.b * self.c != 1:
            raise PreconditionError(
                f"determinant of {self.as_tuple()} is {self.a * self.d - self.b * self.c}, not 1"
            )

    @classmethod
    def identity(cls) -> "Mat2Z":
        return cls(1, 0, 0, 1)

    @classmethod
    def from_seq(cls, entries: Sequence[int]) -> "Mat2Z":
        if len(entries) != 4:
            raise PreconditionError(f"expected 4 entries, got {len(entries)}")
        return cls(*entries)

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.a, self.b, self.c, self.d)

    def __matmul__(self, other: "Mat2Z") -> "Mat2Z":
        a, b, c, d = self.as_tuple()
        e, f, g, h = other.as_tuple()
        return Mat2Z(a * e + b * g, a * f + b * h, c * e + d * g, c * f + d * h)

    def __neg__(self) -> "Mat2Z":
        return Mat2Z(-self.a, -self.b, -self.c, -self.d)

    def inverse(self) -> "Mat2Z":
        return Mat2Z(self.d, -self.b, -self.c, self.a)

    def trace(self) -> int:
        return self.a + self.d

    def norm_sq(self) -> int:
        return self.a**2 + self.b**2 + self.c**2 + self.d**2

    def __repr__(self):
        return f"Mat2Z([[{self.a}, {self.b}], [{self.c}, {self.d}]])"


def _mul(x, y):
    """Product of two entry quadruples (plain tuples, no det check)."""
    a, b, c, d = x
    e, f, g, h = y
    return (a * e + b * g, a * f + b * h, c * e + d * g, c * f + d * h)


# --------------------------------------------------------------------------
# upper half-plane


@dataclass(frozen=True, slots=True)
class UpperHalfPoint:
    """A point ``x + i y`` of the upper half-plane.

    Coordinates may be floats or ``Fraction`` s; the Mobius action keeps
    rational points rational, which the exact norm-distance check relies on.
    """

    x: float | Fraction
    y: float | Fraction

    def __post_init__(self):
        if not self.y > 0:
            raise PreconditionError(f"imaginary part must be positive, got {self.y}")

    @classmethod
    def from_complex(cls, z: complex) -> "UpperHalfPoint":
        return cls(z.real, z.imag)

    def as_complex(self) -> complex:
        return complex(float(self.x), float(self.y))


I_POINT = UpperHalfPoint(0.0, 1.0)


def as_point(z) -> UpperHalfPoint:
    if isinstance(z, UpperHalfPoint):
        return z
    if isinstance(z, complex):
        return UpperHalfPoint.from_complex(z)
    x, y = z
    return UpperHalfPoint(x, y)


def u_invariant(z, w):
    """``|z - w|^2 / (4 Im z Im w)``; exact when both points are rational."""
    z, w = as_point(z), as_point(w)
    return ((z.x - w.x) ** 2 + (z.y - w.y) ** 2) / (4 * z.y * w.y)


def hyp_distance(z, w) -> float:
    """Hyperbolic distance ``log((|z - w*| + |z - w|) / (|z - w*| - |z - w|))``.

    The denominator equals ``4 Im z Im w / (|z - w*| + |z - w|)``, which avoids
    the cancellation of the literal form at large distances.
    """
    z, w = as_point(z), as_point(w)
    zx, zy, wx, wy = float(z.x), float(z.y), float(w.x), float(w.y)
    dx = zx - wx
    near = math.hypot(dx, zy - wy)
    far = math.hypot(dx, zy + wy)
    return 2.0 * math.log((far + near) / (2.0 * math.sqrt(zy * wy)))


def mobius_act(g: Mat2Z, z) -> UpperHalfPoint:
    """``(a z + b) / (c z + d)``."""
    z = as_point(z)
    a, b, c, d = g.as_tuple()
    x, y = z.x, z.y
    re = c * x + d
    den = re * re + (c * y) ** 2
    return UpperHalfPoint(((a * x + b) * re + a * c * y * y) / den, y / den)


def matrix_norm_sq(g: Mat2Z) -> int:
    return g.norm_sq()


def norm_distance_identity_check(g: Mat2Z, exact: bool = True) -> float:
    """Residual ``| |g|^2 - (4 u(g i, i) + 2) |``.

    With ``exact=True`` the orbit point ``g i`` is computed in rational
    arithmetic (its coordinates are rational), so the residual is exactly 0
    whenever the identity holds.  ``exact=False`` uses floating point and is
    only meaningful for modest entries.
    """
    base = UpperHalfPoint(Fraction(0), Fraction(1)) if exact else I_POINT
    u = u_invariant(mobius_act(g, base), base)
    return float(abs(g.norm_sq() - (4 * u + 2)))


def distance_from_norm_sq(norm_sq):
    """``rho(i, g i)`` from ``|g|^2`` (vectorised)."""
    return np.arccosh(np.asarray(norm_sq, dtype=np.float64) / 2.0)


# --------------------------------------------------------------------------
# generator systems and words


@dataclass(frozen=True)
class GeneratorSystem:
    """Symmetric generating set ``(g1, g1^-1, ..., gk, gk^-1)``.

    ``transition[i, j] == 0`` exactly when ``j`` is the inverse letter of
    ``i``, so admissible words never cancel immediately.
    """

    generators: tuple[Mat2Z, ...]
    inverse_pairing: tuple[int, ...] = field(repr=False)
    transition: np.ndarray = field(repr=False, compare=False)
    name: str = ""

    @classmethod
    def from_base(cls, base: Iterable, name: str = "") -> "GeneratorSystem":
        mats = [g if isinstance(g, Mat2Z) else Mat2Z.from_seq(list(g)) for g in base]
        if not mats:
            raise PreconditionError("need at least one generator")
        seen: set[tuple] = set()
        gens: list[Mat2Z] = []
        for idx, g in enumerate(mats):
            if g.as_tuple() in {(1, 0, 0, 1), (-1, 0, 0, -1)}:
                raise PreconditionError(f"generator {idx} is +-I")
            for h in (g, g.inverse()):
                if h.as_tuple() in seen:
                    raise PreconditionError(f"generator {idx} repeats an earlier generator or inverse")
                seen.add(h.as_tuple())
            gens.extend([g, g.inverse()])
        n = len(gens)
        pairing = tuple(i ^ 1 for i in range(n))
        A = np.ones((n, n), dtype=np.int64)
        for i in range(n):
            A[i, pairing[i]] = 0
        return cls(tuple(gens), pairing, A, name)

    @property
    def size(self) -> int:
        return len(self.generators)

    @property
    def rank(self) -> int:
        return len(self.generators) // 2

    def base(self) -> list[Mat2Z]:
        return list(self.generators[::2])

    def as_array(self, dtype=np.int64) -> np.ndarray:
        return np.array([g.as_tuple() for g in self.generators], dtype=dtype)

    def max_entry(self) -> int:
        return max(max(abs(v) for v in g.as_tuple()) for g in self.generators)

    def conjugate(self, h: Mat2Z) -> "GeneratorSystem":
        """System generated by ``h g h^-1``."""
        hi = h.inverse()
        return GeneratorSystem.from_base([h @ g @ hi for g in self.base()], self.name)

    def is_irreducible_aperiodic(self) -> bool:
        A = self.transition
        n = A.shape[0]
        M = np.linalg.matrix_power(np.minimum(A, 1).astype(np.float64), n * n - 2 * n + 2 if n > 1 else 1)
        return bool((M > 0).all())


def is_admissible(S: GeneratorSystem, word: Sequence[int]) -> bool:
    if any(not 0 <= i < S.size for i in word):
        return False
    return all(S.transition[word[n], word[n + 1]] for n in range(len(word) - 1))


def word_to_matrix(S: GeneratorSystem, word: Sequence[int]) -> Mat2Z:
    """Evaluate a word in application order (rightmost factor is ``word[0]``)."""
    if not is_admissible(S, word):
        raise PreconditionError(f"word {tuple(word)} is not admissible")
    acc = (1, 0, 0, 1)
    for i in word:
        acc = _mul(S.generators[i].as_tuple(), acc)
    return Mat2Z(*acc)


def random_word(S: GeneratorSystem, length: int, rng: np.random.Generator) -> tuple[int, ...]:
    word: list[int] = []
    for _ in range(length):
        choices = [j for j in range(S.size) if not word or S.transition[word[-1], j]]
        word.append(int(rng.choice(choices)))
    return tuple(word)


# --------------------------------------------------------------------------
# ball enumeration


@dataclass
class Ball:
    """Distinct elements of ``{g in Lambda : |g|^2 <= max_norm_sq}``.

    Every element carries a word certificate from the BFS tree rooted at the
    identity; :meth:`word` walks that tree.  The tree may route through
    elements just outside the ball, so it is stored separately.
    """

    system: GeneratorSystem
    max_norm_sq: int
    elements: np.ndarray
    norm_sq: np.ndarray
    word_length: np.ndarray
    tree_parent: np.ndarray = field(repr=False)
    tree_letter: np.ndarray = field(repr=False)
    tree_index: np.ndarray = field(repr=False)

    def __len__(self):
        return int(self.elements.shape[0])

    @property
    def count(self) -> int:
        return len(self)

    def word(self, k: int) -> tuple[int, ...]:
        letters = []
        node = int(self.tree_index[k])
        while self.tree_parent[node] >= 0:
            letters.append(int(self.tree_letter[node]))
            node = int(self.tree_parent[node])
        return tuple(reversed(letters))

    def matrix(self, k: int) -> Mat2Z:
        return Mat2Z(*(int(v) for v in self.elements[k]))

    def as_set(self) -> set[tuple[int, int, int, int]]:
        return {tuple(int(v) for v in row) for row in self.elements}

    def int64_elements(self) -> np.ndarray:
        if self.elements.dtype == object:
            if len(self) and max(abs(int(v)) for v in self.elements.ravel()) >= 2**62:
                raise OverflowError("ball entries exceed int64")
            return self.elements.astype(np.int64)
        return self.elements


def norm_sq_bound(T: float) -> int:
    """Largest integer ``n`` with ``n <= T^2``, computed exactly from the float ``T``."""
    return math.floor(Fraction(T) ** 2)


def _work_dtype(S: GeneratorSystem, expand_sq: int):
    g = S.max_entry()
    return np.int64 if 16 * g * g * expand_sq < _kernels.INT64_SAFE else object


def enumerate_ball(
    S: GeneratorSystem,
    T: float | None = None,
    *,
    max_norm_sq: int | None = None,
    budget: int | None = None,
    workers: int = 1,
) -> Ball:
    """All distinct ``g`` in the group generated by ``S`` with ``|g| <= T``.

    Breadth-first search over group elements (not words): each frontier
    element is left-multiplied by every generator and a product is kept only
    if its norm^2 is at most ``max(T^2, 3)``.  The result is exact whenever
    every element of norm^2 > 2 has a generator neighbour of strictly smaller
    norm (true for SL2(Z) with its elementary generators and for the Sanov
    group by lattice reduction; see :func:`check_descent`).  The radius 3
    lets the search cross from ``I`` to the other norm^2-2 elements (``-I``,
    ``+-[[0,-1],[1,0]]``) when the group contains them.

    ``workers > 1`` splits each frontier across threads; candidates are
    merged and de-duplicated in a fixed order, so results do not depend on
    the worker count.
    """
    if max_norm_sq is None:
        if T is None:
            raise PreconditionError("give T or max_norm_sq")
        if T < math.sqrt(2) - 1e-12:
            raise PreconditionError(f"T must be >= sqrt(2), got {T}")
        max_norm_sq = norm_sq_bound(T)
    max_norm_sq = int(max_norm_sq)
    if max_norm_sq < 2:
        raise PreconditionError("max_norm_sq must be >= 2")
    if budget is not None and budget <= 0:
        raise PreconditionError("budget must be positive")

    expand_sq = max(max_norm_sq, 3)
    dtype = _work_dtype(S, expand_sq)
    gens = S.as_array(dtype)
    bound = expand_sq if dtype is object else np.int64(expand_sq)

    ident = np.array([[1, 0, 0, 1]], dtype=dtype)
    seen: dict[tuple, int] = {(1, 0, 0, 1): 0}
    elems = [ident]
    parents = [np.array([-1], dtype=np.int64)]
    letters = [np.array([-1], dtype=np.int64)]
    depths = [np.array([0], dtype=np.int64)]
    frontier, frontier_start, depth, total = ident, 0, 0, 1

    def expand(chunk):
        return _kernels.expand_frontier(chunk, gens, bound)

    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        while frontier.shape[0]:
            depth += 1
            if pool is None:
                parts = [expand(frontier)]
                offsets = [0]
            else:
                chunks = np.array_split(frontier, workers)
                offsets = np.cumsum([0] + [len(c) for c in chunks[:-1]]).tolist()
                parts = list(pool.map(expand, chunks))
            new_rows, new_par, new_let = [], [], []
            for (cand, par, let), off in zip(parts, offsets):
                for row, p, l in zip(cand.tolist(), par.tolist(), let.tolist()):
                    key = tuple(row)
                    if key in seen:
                        continue
                    seen[key] = total
                    total += 1
                    new_rows.append(key)
                    new_par.append(frontier_start + off + p)
                    new_let.append(l)
            if budget is not None and total > budget:
                partial = _assemble(S, max_norm_sq, elems, parents, letters, depths, dtype)
                raise BudgetExceeded(
                    f"element budget {budget} exceeded at word length {depth}",
                    partial=partial,
                    count=len(partial),
                )
            if not new_rows:
                break
            frontier_start += frontier.shape[0]
            frontier = np.array(new_rows, dtype=dtype).reshape(-1, 4)
            elems.append(frontier)
            parents.append(np.array(new_par, dtype=np.int64))
            letters.append(np.array(new_let, dtype=np.int64))
            depths.append(np.full(len(new_rows), depth, dtype=np.int64))
    finally:
        if pool is not None:
            pool.shutdown()
    return _assemble(S, max_norm_sq, elems, parents, letters, depths, dtype)


def _assemble(S, max_norm_sq, elems, parents, letters, depths, dtype) -> Ball:
    E = np.concatenate(elems)
    nsq = (E * E).sum(axis=1)
    keep = np.nonzero(nsq <= max_norm_sq)[0]
    return Ball(
        S,
        max_norm_sq,
        E[keep],
        nsq[keep],
        np.concatenate(depths)[keep],
        np.concatenate(parents),
        np.concatenate(letters),
        keep,
    )


def check_descent(ball: Ball) -> list[tuple[int, int, int, int]]:
    """Elements of norm^2 > 2 with no generator neighbour of smaller norm.

    An empty list is the runtime witness of the descent property on the
    enumerated ball.
    """
    E = ball.elements
    gens = ball.system.as_array(E.dtype)
    nb, _, _ = _kernels.expand_frontier(E, gens, np.iinfo(np.int64).max if E.dtype != object else 10**400)
    nb_sq = (nb * nb).sum(axis=1).reshape(len(E), gens.shape[0])
    bad = (ball.norm_sq > 2) & ~(nb_sq < ball.norm_sq[:, None]).any(axis=1)
    return [tuple(int(v) for v in E[k]) for k in np.nonzero(bad)[0]]


def exhaustive_ball(S: GeneratorSystem, T: float, max_length: int) -> set[tuple[int, int, int, int]]:
    """Oracle: every admissible word of length <= ``max_length``, evaluated and
    filtered by ``|g| <= T``, de-duplicated by exact entries.  No pruning."""
    bound = norm_sq_bound(T)
    gens = [g.as_tuple() for g in S.generators]
    inv = S.inverse_pairing
    out = set()
    if 2 <= bound:
        out.add((1, 0, 0, 1))
    stack = [((1, 0, 0, 1), -1, 0)]
    while stack:
        m, last, length = stack.pop()
        if length == max_length:
            continue
        for j, g in enumerate(gens):
            if last >= 0 and j == inv[last]:
                continue
            p = _mul(g, m)
            if p[0] ** 2 + p[1] ** 2 + p[2] ** 2 + p[3] ** 2 <= bound:
                out.add(p)
            stack.append((p, j, length + 1))
    return out
