"""Time each hot kernel under the numba and pure-numpy backends.

    python benchmarks/bench_kernels.py [--repeat 5]

Each row reports the median wall time per call after one warm-up call (which
absorbs numba compilation) and checks that both backends return the same
result before timing.
"""

from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from thinlab._kernels import NUMBA_KERNELS, NUMPY_KERNELS
from thinlab.congruence import closure_mod_q
from thinlab.hyperbolic import GeneratorSystem, enumerate_ball
from thinlab.thermo import build_grid, congruence_transfer_matrix, transfer_matrix

SANOV = [(1, 2, 0, 1), (1, 0, 2, 1)]
SL2Z = [(1, 1, 0, 1), (1, 0, 1, 1)]
SCHOTTKY = [(5, 2, 2, 1), (13, 45, 2, 7)]


def _cases():
    rng = np.random.default_rng(0)
    sl2z = GeneratorSystem.from_base(SL2Z)
    gens = sl2z.as_array(np.int64)
    ball = enumerate_ball(sl2z, 300)
    widest = np.bincount(ball.word_length).argmax()
    frontier = ball.elements[ball.word_length == widest]
    bound = int(ball.max_norm_sq) * 4

    schottky = GeneratorSystem.from_base(SCHOTTKY)
    grid = build_grid(schottky, 9)
    tm = transfer_matrix(grid, 0.25)
    f = rng.random(grid.size)
    cm = congruence_transfer_matrix(build_grid(schottky, 7), 3, 0.25)
    F = rng.random(cm.shape)

    sanov = GeneratorSystem.from_base(SANOV)
    G = closure_mod_q(sanov, 13)
    perm = np.stack([G.left_perm(g) for g in sanov.as_array(np.int64)])
    phi = rng.random(G.size)

    vals = rng.integers(2, 10**7, size=200_000)
    sanov_gens13 = sanov.as_array(np.int64) % 13

    return [
        ("expand_frontier", lambda k: k.expand_frontier(frontier, gens, bound), f"{len(frontier)} rows x 4"),
        ("gather_matvec", lambda k: k.gather_matvec(tm.grid.preimage, tm.weights, f), f"{grid.size} cylinders"),
        ("gather_matvec_group", lambda k: k.gather_matvec_group(cm.grid.preimage, cm.weights, cm.grid.letter,
                                                                cm.perm, F), f"{cm.shape[0]}x{cm.shape[1]}"),
        ("cayley_apply", lambda k: k.cayley_apply(perm, phi), f"|SL2(13)| = {G.size}"),
        ("bigomega", lambda k: k.bigomega(vals), f"{vals.size} values < 1e7"),
        ("closure_bfs", lambda k: k.closure_bfs(sanov_gens13, 13), "Sanov mod 13"),
    ]


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-12, atol=0) if a.dtype.kind == "f" else np.array_equal(a, b)


def _time(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if NUMBA_KERNELS is None:
        raise SystemExit("numba is not importable; nothing to compare")
    print(f"{'kernel':<22}{'size':<22}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, call, size in _cases():
        ref, fast = call(NUMPY_KERNELS), call(NUMBA_KERNELS)
        if not _same(ref, fast):
            raise SystemExit(f"{name}: backends disagree")
        t_np = _time(lambda: call(NUMPY_KERNELS), args.repeat)
        t_nb = _time(lambda: call(NUMBA_KERNELS), args.repeat)
        print(f"{name:<22}{size:<22}{1e3 * t_np:>10.2f}{1e3 * t_nb:>10.2f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
