"""Hot inner loops, each written twice: a numba ``@njit`` version and a
pure-numpy version with identical semantics.

The numba path is selected when numba imports cleanly and the environment
variable ``THINLAB_NUMBA`` is not ``"0"``.  Both implementations are always
importable as ``NUMPY_KERNELS`` / ``NUMBA_KERNELS`` so tests and the
benchmark can compare them directly.
"""

from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np

INT64_SAFE = 2**62

# --------------------------------------------------------------------------
# numpy implementations


def _expand_frontier_np(frontier, gens, max_norm_sq):
    a, b, c, d = (frontier[:, k][:, None] for k in range(4))
    ga, gb, gc, gd = (gens[:, k][None, :] for k in range(4))
    # left multiplication: new = g @ old, ordered (frontier index, letter)
    na = ga * a + gb * c
    nb = ga * b + gb * d
    nc = gc * a + gd * c
    nd = gc * b + gd * d
    nsq = na * na + nb * nb + nc * nc + nd * nd
    keep = (nsq <= max_norm_sq).ravel()
    cand = np.stack([na.ravel(), nb.ravel(), nc.ravel(), nd.ravel()], axis=1)[keep]
    n, m = frontier.shape[0], gens.shape[0]
    parent = np.repeat(np.arange(n, dtype=np.int64), m)[keep]
    letter = np.tile(np.arange(m, dtype=np.int64), n)[keep]
    return cand, parent, letter


def _gather_matvec_np(P, W, f):
    y = W[:, 0] * f[P[:, 0]]
    for j in range(1, P.shape[1]):
        y = y + W[:, j] * f[P[:, j]]
    return y


def _gather_matvec_group_np(P, W, L, perm, F):
    y = W[:, 0, None] * F[P[:, 0, None], perm[L[:, 0]]]
    for j in range(1, P.shape[1]):
        y = y + W[:, j, None] * F[P[:, j, None], perm[L[:, j]]]
    return y


def _cayley_apply_np(perm, f):
    acc = f[perm[0]].astype(np.float64)
    for s in range(1, perm.shape[0]):
        acc = acc + f[perm[s]]
    return acc / perm.shape[0]


def _spf_table(limit):
    spf = np.arange(limit + 1, dtype=np.int64)
    for p in range(2, int(limit**0.5) + 1):
        if spf[p] == p:
            spf[p * p :: p] = np.minimum(spf[p * p :: p], p)
    return spf


def _bigomega_np(values):
    """Prime factors with multiplicity; -1 for 0.  Uses a smallest-prime-factor table."""
    values = np.asarray(values, dtype=np.int64)
    out = np.zeros(values.shape, dtype=np.int64)
    out[values == 0] = -1
    if values.size == 0 or values.max() < 2:
        return out
    vmax = int(values.max())
    if vmax > 50_000_000:
        raise ValueError("numpy big-omega path limited to values <= 5e7")
    spf = _spf_table(vmax)
    v = values.copy()
    active = v > 1
    while active.any():
        idx = np.nonzero(active)[0]
        p = spf[v[idx]]
        v[idx] //= p
        out[idx] += 1
        active = v > 1
    return out


def _closure_bfs_np(gens, q):
    qi = int(q)
    identity = np.array([[1 % qi, 0, 0, 1 % qi]], dtype=np.int64)
    visited = np.zeros(qi**4, dtype=np.bool_)

    def keys(rows):
        return ((rows[:, 0] * qi + rows[:, 1]) * qi + rows[:, 2]) * qi + rows[:, 3]

    visited[keys(identity)] = True
    frontier = identity
    found = [identity]
    while frontier.shape[0]:
        cand, _, _ = _expand_frontier_np(frontier, gens, np.iinfo(np.int64).max)
        cand %= qi
        k = keys(cand)
        k, first = np.unique(k, return_index=True)
        fresh = ~visited[k]
        visited[k[fresh]] = True
        frontier = cand[first[fresh]]
        found.append(frontier)
    rows = np.concatenate(found)
    return rows[np.argsort(keys(rows), kind="stable")]


NUMPY_KERNELS = SimpleNamespace(
    name="numpy",
    expand_frontier=_expand_frontier_np,
    gather_matvec=_gather_matvec_np,
    gather_matvec_group=_gather_matvec_group_np,
    cayley_apply=_cayley_apply_np,
    bigomega=_bigomega_np,
    closure_bfs=_closure_bfs_np,
)

# --------------------------------------------------------------------------
# numba implementations


def _build_numba():
    import numba

    njit = numba.njit(cache=True)

    @njit
    def expand_frontier(frontier, gens, max_norm_sq):
        n = frontier.shape[0]
        m = gens.shape[0]
        cand = np.empty((n * m, 4), dtype=np.int64)
        parent = np.empty(n * m, dtype=np.int64)
        letter = np.empty(n * m, dtype=np.int64)
        k = 0
        for i in range(n):
            a, b, c, d = frontier[i, 0], frontier[i, 1], frontier[i, 2], frontier[i, 3]
            for j in range(m):
                na = gens[j, 0] * a + gens[j, 1] * c
                nb = gens[j, 0] * b + gens[j, 1] * d
                nc = gens[j, 2] * a + gens[j, 3] * c
                nd = gens[j, 2] * b + gens[j, 3] * d
                if na * na + nb * nb + nc * nc + nd * nd <= max_norm_sq:
                    cand[k, 0] = na
                    cand[k, 1] = nb
                    cand[k, 2] = nc
                    cand[k, 3] = nd
                    parent[k] = i
                    letter[k] = j
                    k += 1
        return cand[:k], parent[:k], letter[:k]

    @njit
    def _gather_matvec_nb(P, W, f, y):
        n, r = P.shape
        for x in range(n):
            acc = W[x, 0] * f[P[x, 0]]
            for j in range(1, r):
                acc = acc + W[x, j] * f[P[x, j]]
            y[x] = acc
        return y

    def gather_matvec(P, W, f):
        return _gather_matvec_nb(P, W, f, np.empty(P.shape[0], dtype=np.result_type(W.dtype, f.dtype)))

    @njit
    def _gather_matvec_group_nb(P, W, L, perm, F, y):
        n, r = P.shape
        G = F.shape[1]
        for x in range(n):
            for g in range(G):
                acc = W[x, 0] * F[P[x, 0], perm[L[x, 0], g]]
                for j in range(1, r):
                    acc = acc + W[x, j] * F[P[x, j], perm[L[x, j], g]]
                y[x, g] = acc
        return y

    def gather_matvec_group(P, W, L, perm, F):
        y = np.empty((P.shape[0], F.shape[1]), dtype=np.result_type(W.dtype, F.dtype))
        return _gather_matvec_group_nb(P, W, L, perm, F, y)

    @njit
    def cayley_apply(perm, f):
        m, n = perm.shape
        out = np.empty(n, dtype=np.float64)
        for x in range(n):
            acc = 0.0
            for s in range(m):
                acc += f[perm[s, x]]
            out[x] = acc / m
        return out

    @njit
    def _bigomega_nb(values):
        out = np.zeros(values.shape[0], dtype=np.int64)
        for i in range(values.shape[0]):
            v = values[i]
            if v == 0:
                out[i] = -1
                continue
            cnt = 0
            while v % 2 == 0:
                v //= 2
                cnt += 1
            p = 3
            while p * p <= v:
                while v % p == 0:
                    v //= p
                    cnt += 1
                p += 2
            if v > 1:
                cnt += 1
            out[i] = cnt
        return out

    def bigomega(values):
        values = np.ascontiguousarray(values, dtype=np.int64)
        return _bigomega_nb(values.ravel()).reshape(values.shape)

    @njit
    def _closure_nb(gens, q, cap):
        visited = np.zeros(q * q * q * q, dtype=np.bool_)
        queue = np.empty((cap, 4), dtype=np.int64)
        queue[0, 0] = 1 % q
        queue[0, 1] = 0
        queue[0, 2] = 0
        queue[0, 3] = 1 % q
        visited[((queue[0, 0] * q) * q) * q + queue[0, 3]] = True
        head = 0
        tail = 1
        while head < tail:
            a, b, c, d = queue[head, 0], queue[head, 1], queue[head, 2], queue[head, 3]
            head += 1
            for j in range(gens.shape[0]):
                na = (gens[j, 0] * a + gens[j, 1] * c) % q
                nb = (gens[j, 0] * b + gens[j, 1] * d) % q
                nc = (gens[j, 2] * a + gens[j, 3] * c) % q
                nd = (gens[j, 2] * b + gens[j, 3] * d) % q
                key = ((na * q + nb) * q + nc) * q + nd
                if not visited[key]:
                    visited[key] = True
                    queue[tail, 0] = na
                    queue[tail, 1] = nb
                    queue[tail, 2] = nc
                    queue[tail, 3] = nd
                    tail += 1
        return queue[:tail]

    def closure_bfs(gens, q):
        qi = int(q)
        # |SL2(Z/qZ)| < q^3 for every q >= 1, so the queue never overflows
        rows = _closure_nb(np.ascontiguousarray(gens, dtype=np.int64) % qi, qi, max(qi**3, 1))
        keys = ((rows[:, 0] * qi + rows[:, 1]) * qi + rows[:, 2]) * qi + rows[:, 3]
        return rows[np.argsort(keys, kind="stable")]

    return SimpleNamespace(
        name="numba",
        expand_frontier=expand_frontier,
        gather_matvec=gather_matvec,
        gather_matvec_group=gather_matvec_group,
        cayley_apply=cayley_apply,
        bigomega=bigomega,
        closure_bfs=closure_bfs,
    )


try:
    NUMBA_KERNELS = _build_numba()
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_KERNELS = None


def _select():
    if os.environ.get("THINLAB_NUMBA", "1") == "0" or NUMBA_KERNELS is None:
        return NUMPY_KERNELS
    return NUMBA_KERNELS


kernels = _select()


def backend_name() -> str:
    return kernels.name


def expand_frontier(frontier, gens, max_norm_sq):
    """Left-multiply every frontier row by every generator, keeping norm^2 <= bound.

    Object-dtype (arbitrary precision) inputs always take the numpy path.
    """
    if frontier.dtype == object or gens.dtype == object:
        return _expand_frontier_np(frontier, gens, max_norm_sq)
    return kernels.expand_frontier(frontier, gens, max_norm_sq)


def gather_matvec(P, W, f):
    return kernels.gather_matvec(P, W, f)


def gather_matvec_group(P, W, L, perm, F):
    return kernels.gather_matvec_group(P, W, L, perm, F)


def cayley_apply(perm, f):
    return kernels.cayley_apply(perm, np.ascontiguousarray(f, dtype=np.float64))


def bigomega(values):
    values = np.asarray(values, dtype=np.int64)
    if kernels is NUMPY_KERNELS and values.size and values.max() > 50_000_000:
        return _bigomega_trial(values)
    return kernels.bigomega(values)


def _bigomega_trial(values):
    out = np.zeros(values.shape, dtype=np.int64)
    for i, v in enumerate(values.ravel().tolist()):
        if v == 0:
            out.flat[i] = -1
            continue
        cnt, p = 0, 2
        while p * p <= v:
            while v % p == 0:
                v //= p
                cnt += 1
            p += 1
        out.flat[i] = cnt + (v > 1)
    return out


def closure_bfs(gens, q):
    return kernels.closure_bfs(np.asarray(gens, dtype=np.int64) % int(q), q)
