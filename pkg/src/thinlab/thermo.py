"""Finite-depth thermodynamic formalism for the no-backtracking coding of Lambda.

Sequences are read left to right: the word ``(x0, x1, ..., x_{m-1})`` stands
for the point ``g_{x0} g_{x1} ... g_{x_{m-1}} w``.  The shift drops ``x0``.

A depth-n cylinder is represented by one point: the periodic sequence obtained
by repeating its word (with one padding letter inserted when the word cannot
follow itself).  On such a point the distance cocycle has the closed form of a
Busemann function, so every cylinder value is computed without truncation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import _kernels
from .congruence import ResidueGroup, SquareFreeModulus, closure_mod_q
from .errors import BudgetExceeded, ConvergenceError, PreconditionError
from .hyperbolic import GeneratorSystem, Mat2Z, UpperHalfPoint, _mul, as_point, hyp_distance, mobius_act
from .spectral import WalshDecomposition

ORIGIN = UpperHalfPoint(0.0, 1.0)


# --------------------------------------------------------------------------
# subshift and basepoint


@dataclass(frozen=True)
class SubshiftSpec:
    system: GeneratorSystem
    basepoint: UpperHalfPoint

    @property
    def alphabet_size(self) -> int:
        return self.system.size

    @property
    def transition(self) -> np.ndarray:
        return self.system.transition


def _admissible_words(S: GeneratorSystem, n: int):
    """All admissible words of length n in lexicographic order."""
    if n == 0:
        return [()]
    words = [(i,) for i in range(S.size)]
    for _ in range(n - 1):
        words = [w + (j,) for w in words for j in range(S.size) if S.transition[w[-1], j]]
    return words


def _fixes(g: tuple, w: UpperHalfPoint) -> bool:
    z = mobius_act(Mat2Z(*g), w)
    return z.x == w.x and z.y == w.y


def make_subshift(S: GeneratorSystem, w=None, *, check_length: int = 6) -> SubshiftSpec:
    """Subshift with basepoint ``w`` (default i, moved to 1/2 + i if some short word fixes i).

    Fixed points are tested exactly, in rational arithmetic, on every
    admissible word of length <= ``check_length``.
    """
    if not S.is_irreducible_aperiodic():
        raise PreconditionError("transition matrix is not irreducible and aperiodic")
    candidates = [as_point(w)] if w is not None else [UpperHalfPoint(0.0, 1.0), UpperHalfPoint(0.5, 1.0)]
    for cand in candidates:
        exact = UpperHalfPoint(Fraction(cand.x), Fraction(cand.y))
        if not _fixed_by_short_word(S, exact, check_length):
            return SubshiftSpec(S, cand)
    raise PreconditionError(f"basepoint {candidates[-1]} is fixed by a word of length <= {check_length}")


def _fixed_by_short_word(S, w, check_length):
    gens = [g.as_tuple() for g in S.generators]
    layer = {(i,): gens[i] for i in range(S.size)}
    for _ in range(check_length):
        for g in layer.values():
            if _fixes(g, w):
                return True
        layer = {
            word + (j,): _mul(g, gens[j])
            for word, g in layer.items()
            for j in range(S.size)
            if S.transition[word[-1], j]
        }
    return False


# --------------------------------------------------------------------------
# the distance cocycle


def _word_product(S: GeneratorSystem, word) -> tuple:
    acc = (1, 0, 0, 1)
    for i in word:
        acc = _mul(acc, S.generators[i].as_tuple())
    return acc


def tau_eval(S: GeneratorSystem, word, w=None, o=ORIGIN) -> float:
    """``d(o, x0 x1 ... w) - d(o, x1 ... w)`` for a finite admissible word."""
    word = tuple(word)
    if not word:
        raise PreconditionError("tau needs a non-empty word")
    if not all(S.transition[word[n], word[n + 1]] for n in range(len(word) - 1)):
        raise PreconditionError(f"word {word} is not admissible")
    w = ORIGIN if w is None else as_point(w)
    full = mobius_act(Mat2Z(*_word_product(S, word)), w)
    tail = mobius_act(Mat2Z(*_word_product(S, word[1:])), w)
    return hyp_distance(o, full) - hyp_distance(o, tail)


def birkhoff_sum_finite(S: GeneratorSystem, word, n: int, w=None, o=ORIGIN) -> float:
    """S_n tau as the sum of n shifted finite-word tau values."""
    return sum(tau_eval(S, word[j:], w, o) for j in range(n))


def attracting_point(g: tuple) -> float:
    """Forward limit of ``g^m z``: the attracting fixed point (math.inf for infinity).

    Parabolic elements return their unique fixed point; elliptic ones raise.
    """
    a, b, c, d = g
    tr = a + d
    disc = tr * tr - 4
    if disc < 0:
        raise PreconditionError(f"elliptic element {g} has no limit point")
    if c == 0:
        # a = d = +-1: parabolic at infinity
        return math.inf
    if disc == 0:
        return (a - d) / (2 * c)
    s = 1 if tr > 0 else -1
    root = s * math.sqrt(disc)
    num = (a - d) + root
    # pick the algebraically equivalent branch without cancellation
    if abs(num) >= abs((a - d) - root):
        return num / (2 * c)
    return -2 * b / ((a - d) - root)


def _poisson(z: UpperHalfPoint, xi: float) -> float:
    if math.isinf(xi):
        return float(z.y)
    return float(z.y) / ((float(z.x) - xi) ** 2 + float(z.y) ** 2)


def busemann(xi: float, z1, z2) -> float:
    """``lim_{y -> xi} d(z1, y) - d(z2, y)``."""
    return math.log(_poisson(as_point(z2), xi) / _poisson(as_point(z1), xi))


def periodic_tail(S: GeneratorSystem, word) -> tuple:
    """Period of the admissible periodic extension of ``word``.

    If the last letter cannot precede the first, the smallest letter that can
    sit between them is appended.
    """
    word = tuple(word)
    if S.transition[word[-1], word[0]]:
        return word
    for j in range(S.size):
        if S.transition[word[-1], j] and S.transition[j, word[0]]:
            return word + (j,)
    raise PreconditionError("no admissible padding letter")  # pragma: no cover


def limit_point_of_shift(S: GeneratorSystem, period: tuple, r: int) -> float:
    """Limit point of sigma^r applied to the periodic sequence ``period^inf``."""
    r %= len(period)
    return attracting_point(_word_product(S, period[r:] + period[:r]))


def tau_periodic(S: GeneratorSystem, word, o=ORIGIN) -> float:
    """tau at the periodic point of the cylinder ``word``.

    Equals ``B_xi(g_{x0}^{-1} o, o)`` with xi the limit point of the shifted
    sequence; it does not depend on the basepoint w.
    """
    period = periodic_tail(S, word)
    xi = limit_point_of_shift(S, period, 1)
    return busemann(xi, mobius_act(S.generators[S.inverse_pairing[period[0]]], o), o)


def birkhoff_periodic(S: GeneratorSystem, word, m: int, o=ORIGIN) -> float:
    """S_m tau at the periodic point of ``word``, by telescoping to one Busemann value."""
    period = periodic_tail(S, word)
    reps = period * (m // len(period) + 1)
    gamma = _word_product(S, reps[:m])
    xi = limit_point_of_shift(S, period, m)
    ginv = Mat2Z(*gamma).inverse()
    return busemann(xi, mobius_act(ginv, o), o)


# --------------------------------------------------------------------------
# cylinder grids


@dataclass
class CylinderGrid:
    system: GeneratorSystem
    depth: int
    words: np.ndarray  # (n_cyl, depth) letters, lexicographic
    tau: np.ndarray  # tau at each cylinder's periodic point
    preimage: np.ndarray  # (n_cyl, 2k-1): index of (i, x0..x_{n-2})
    letter: np.ndarray  # (n_cyl, 2k-1): the prepended letter i
    index: dict = field(repr=False)

    @property
    def size(self) -> int:
        return int(self.words.shape[0])

    def refinement_parent(self, coarse: "CylinderGrid") -> np.ndarray:
        """Index in ``coarse`` (depth n) of each cylinder's length-n prefix."""
        n = coarse.depth
        return np.array([coarse.index[tuple(w[:n])] for w in self.words.tolist()], dtype=np.int64)


def cylinder_count(S: GeneratorSystem, n: int) -> int:
    """Sum of the entries of A^(n-1) applied to the all-ones vector."""
    A = S.transition.astype(object)
    v = np.ones(S.size, dtype=object)
    for _ in range(n - 1):
        v = A @ v
    return int(v.sum())


def build_grid(S: GeneratorSystem, depth: int, *, budget: int = 2_000_000, o=ORIGIN) -> CylinderGrid:
    if depth < 1:
        raise PreconditionError("depth must be >= 1")
    count = cylinder_count(S, depth)
    if count > budget:
        raise BudgetExceeded(f"{count} cylinders exceed budget {budget}", count=count)
    words = _admissible_words(S, depth)
    index = {w: k for k, w in enumerate(words)}
    tau = np.array([tau_periodic(S, w, o) for w in words])
    r = S.size - 1
    pre = np.empty((count, r), dtype=np.int64)
    let = np.empty((count, r), dtype=np.int64)
    for k, w in enumerate(words):
        cols = [i for i in range(S.size) if S.transition[i, w[0]]]
        for j, i in enumerate(cols):
            pre[k, j] = index[(i,) + w[:-1]]
            let[k, j] = i
    return CylinderGrid(S, depth, np.array(words, dtype=np.int64).reshape(count, depth), tau, pre, let, index)


@dataclass
class HolderFit:
    depths: np.ndarray
    variations: np.ndarray  # max |tau(n) - tau(n+1 refinement)|
    rho: float
    constant: float


def holder_fit(S: GeneratorSystem, depths) -> HolderFit:
    """Fit ``var_n tau ~ C rho^n`` from refinement differences between consecutive depths."""
    depths = sorted(depths)
    grids = {n: build_grid(S, n) for n in depths + [depths[-1] + 1]}
    var = []
    for n in depths:
        fine, coarse = grids[n + 1], grids[n]
        var.append(float(np.max(np.abs(fine.tau - coarse.tau[fine.refinement_parent(coarse)]))))
    var = np.array(var)
    slope, icpt = np.polyfit(depths, np.log(var), 1)
    return HolderFit(np.array(depths), var, float(math.exp(slope)), float(math.exp(icpt)))


@dataclass
class PositivityResult:
    ok: bool
    m: int | None
    min_sum: float
    offending: tuple | None


def eventual_positivity_check(S: GeneratorSystem, m_max: int, *, extra_depth: int = 3,
                              margin: float = 1e-9) -> PositivityResult:
    """Smallest m with S_m tau > margin at the periodic point of every depth-(m + extra) cylinder."""
    worst = (math.inf, None)
    for m in range(1, m_max + 1):
        worst = (math.inf, None)
        for w in _admissible_words(S, m + extra_depth):
            v = birkhoff_periodic(S, w, m)
            if v < worst[0]:
                worst = (v, w)
        if worst[0] > margin:
            return PositivityResult(True, m, worst[0], None)
    return PositivityResult(False, None, worst[0], worst[1])


# --------------------------------------------------------------------------
# transfer matrices


@dataclass
class TransferMatrix:
    grid: CylinderGrid
    s: float
    weights: np.ndarray  # weights[x, j] = exp(-s tau(preimage[x, j]))

    @property
    def preimage(self):
        return self.grid.preimage

    def apply(self, f):
        return _kernels.gather_matvec(self.grid.preimage, self.weights, np.ascontiguousarray(f))

    def apply_transpose(self, nu):
        contrib = self.weights * nu[:, None]
        return np.bincount(self.grid.preimage.ravel(), weights=contrib.ravel(), minlength=self.grid.size)

    def dense(self) -> np.ndarray:
        n = self.grid.size
        M = np.zeros((n, n))
        np.add.at(M, (np.repeat(np.arange(n), self.weights.shape[1]), self.grid.preimage.ravel()),
                  self.weights.ravel())
        return M


def transfer_matrix(grid: CylinderGrid, s: float) -> TransferMatrix:
    """Matrix of L_{-s}: row x sums e^{-s tau(y)} f(y) over its preimages y."""
    return TransferMatrix(grid, float(s), np.exp(-float(s) * grid.tau[grid.preimage]))


@dataclass
class Eigentriple:
    lam: float
    h: np.ndarray
    nu: np.ndarray
    iterations: int
    residual: float
    history: np.ndarray = field(repr=False)


def _power(apply, v, tol, max_iter):
    lam, hist = 0.0, []
    v = v / v.sum()
    for it in range(1, max_iter + 1):
        w = apply(v)
        lam = float(w.sum())  # v sums to 1, so this is the Collatz ratio average
        w = w / lam
        resid = float(np.max(np.abs(w - v)) / np.max(np.abs(w)))
        hist.append(resid)
        v = w
        if resid <= tol:
            return lam, v, it, resid, hist
    raise ConvergenceError(f"power iteration did not reach {tol} in {max_iter} steps", estimate=lam)


def leading_eigenvalue(tm: TransferMatrix, tol: float = 1e-13, max_iter: int = 100_000,
                       h0=None, nu0=None) -> Eigentriple:
    """Perron triple (lambda, h, nu) with sum(nu) = 1 and sum(h nu) = 1."""
    n = tm.grid.size
    h0 = np.ones(n) if h0 is None else h0
    nu0 = np.ones(n) if nu0 is None else nu0
    lam, h, it1, r1, hist = _power(tm.apply, np.asarray(h0, float), tol, max_iter)
    lam2, nu, it2, r2, _ = _power(tm.apply_transpose, np.asarray(nu0, float), tol, max_iter)
    nu = nu / nu.sum()
    h = h / float(h @ nu)
    resid = float(np.max(np.abs(tm.apply(h) - lam * h)) / np.max(h))
    return Eigentriple(lam, h, nu, max(it1, it2), resid, np.array(hist))


# --------------------------------------------------------------------------
# critical exponent


@dataclass
class DeltaEstimate:
    delta: float
    rows: list[tuple[int, int, float, float]]  # depth, cylinders, delta_hat, drift (nan for first)
    bracket: tuple[float, float]

    @property
    def drift(self) -> float:
        return self.rows[-1][3]


def solve_pressure_zero(grid: CylinderGrid, tol: float = 1e-6, *, s_hi: float = 1.0, max_steps: int = 200):
    """Bisection for lambda_{-s} = 1; returns (s, (lo, hi), lambda at s)."""
    cache = {}

    def lam(s):
        if s not in cache:
            cache[s] = leading_eigenvalue(transfer_matrix(grid, s), tol=1e-13).lam
        return cache[s]

    lo = 0.0
    if lam(lo) <= 1.0:
        raise PreconditionError("lambda at s = 0 is <= 1: degenerate system, no bracket")
    hi = s_hi
    while lam(hi) >= 1.0:
        lo, hi = hi, 2 * hi
        if hi > 64:
            raise PreconditionError("no sign change of log lambda_{-s} up to s = 64")
    for _ in range(max_steps):
        mid = 0.5 * (lo + hi)
        lm = lam(mid)
        if lm > 1.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol and abs(lm - 1.0) <= tol:
            return mid, (lo, hi), lm
    raise ConvergenceError("bisection did not converge", estimate=0.5 * (lo + hi))


def estimate_delta(S: GeneratorSystem, depths=(4, 5, 6, 7, 8), tol: float = 1e-6) -> DeltaEstimate:
    rows, prev, bracket = [], None, (0.0, 1.0)
    for n in sorted(depths):
        grid = build_grid(S, n)
        d, bracket, _ = solve_pressure_zero(grid, tol)
        rows.append((n, grid.size, d, abs(d - prev) if prev is not None else math.nan))
        prev = d
    return DeltaEstimate(rows[-1][2], rows, bracket)


def pressure_curve(grid: CylinderGrid, s_values) -> np.ndarray:
    return np.array([math.log(leading_eigenvalue(transfer_matrix(grid, s)).lam) for s in s_values])


def gibbs_ratio_check(grid: CylinderGrid, s: float, *, s_potential: float | None = None) -> tuple[float, float]:
    """Min and max over depth-n cylinders of ``mu[x] / (lambda^-n exp(-s' S_n tau(x)))``.

    ``mu = h nu`` comes from the eigentriple at ``s``; the comparison potential
    uses ``s' = s_potential`` (default ``s``).  A mismatched ``s'`` is a
    negative control.
    """
    sp = s if s_potential is None else s_potential
    et = leading_eigenvalue(transfer_matrix(grid, s))
    lam = leading_eigenvalue(transfer_matrix(grid, sp)).lam if sp != s else et.lam
    n = grid.depth
    S = grid.system
    sums = np.array([birkhoff_periodic(S, tuple(w), n) for w in grid.words.tolist()])
    mu = et.h * et.nu
    ratio = mu * lam**n * np.exp(sp * sums)
    return float(ratio.min()), float(ratio.max())


# --------------------------------------------------------------------------
# congruence extension


@dataclass
class CongruenceTransferMatrix:
    grid: CylinderGrid
    group: ResidueGroup
    s: float
    weights: np.ndarray
    perm: np.ndarray  # perm[i, g] = index(g_i g)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.grid.size, self.group.size)

    def apply(self, F):
        F = np.ascontiguousarray(F, dtype=np.result_type(F, np.float64))
        return _kernels.gather_matvec_group(self.grid.preimage, self.weights, self.grid.letter, self.perm, F)


def congruence_transfer_matrix(grid: CylinderGrid, q, s: float, *, budget: int = 5_000_000) -> CongruenceTransferMatrix:
    """``(M F)(x, g) = sum_i e^{-s tau(i x)} F(i x, g_i g)`` on cylinders x group."""
    m = SquareFreeModulus.of(q)
    group = closure_mod_q(grid.system, m)
    if not group.is_full:
        raise PreconditionError(f"closure mod {m.q} is not all of SL2")
    dim = grid.size * group.size
    if dim > budget:
        raise BudgetExceeded(f"dimension {dim} exceeds budget {budget}", count=dim)
    perm = np.stack([group.left_perm(g) for g in grid.system.as_array(np.int64)])
    base = transfer_matrix(grid, s)
    return CongruenceTransferMatrix(grid, group, float(s), base.weights, perm)


@dataclass
class SectorGap:
    q: int
    dim: int
    lam: float
    sector_radius: float
    ratio: float
    method: str
    cross_check: float


def _sector_radius_power(M: CongruenceTransferMatrix, proj, rng, steps: int = 400):
    """Gelfand growth rate |M^m F|^(1/m) of a random sector vector."""
    F = proj(rng.standard_normal(M.shape))
    F /= np.linalg.norm(F)
    logs = [0.0]
    for _ in range(steps):
        F = proj(M.apply(F))
        nrm = np.linalg.norm(F)
        logs.append(logs[-1] + math.log(nrm))
        F /= nrm
    half = steps // 2
    return math.exp((logs[-1] - logs[half]) / (steps - half))


def congruence_sector_gap(S: GeneratorSystem, depth: int, q, s: float, *, seed: int = 0) -> SectorGap:
    """Spectral radius of M_{-s} on the level-q sector, relative to lambda_{-s}.

    The primary value comes from Arnoldi iteration on the projected operator;
    a Gelfand-growth power estimate is reported alongside as a cross-check.
    """
    from scipy.sparse.linalg import LinearOperator, eigs

    grid = build_grid(S, depth)
    lam = leading_eigenvalue(transfer_matrix(grid, s)).lam
    m = SquareFreeModulus.of(q)
    if m.q == 1:
        return SectorGap(1, grid.size, lam, lam, 1.0, "degenerate", 1.0)
    M = congruence_transfer_matrix(grid, m, s)
    W = WalshDecomposition(M.group)

    def proj(F):
        return W.project(F, m.q)

    shape = M.shape
    op = LinearOperator((shape[0] * shape[1],) * 2, dtype=np.float64,
                        matvec=lambda v: proj(M.apply(proj(v.reshape(shape)))).ravel())
    rng = np.random.default_rng(seed)
    v0 = proj(rng.standard_normal(shape)).ravel()
    vals = eigs(op, k=6, which="LM", v0=v0, return_eigenvectors=False, tol=1e-10, maxiter=20_000)
    radius = float(np.max(np.abs(vals)))
    check = _sector_radius_power(M, proj, rng)
    return SectorGap(m.q, shape[0] * shape[1], lam, radius, radius / lam, "arnoldi", check / lam)
