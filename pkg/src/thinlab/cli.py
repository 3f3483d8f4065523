"""Command-line entry point.

Exit codes: 0 success, 1 invalid input or failed precondition, 2 budget
exhausted (partial results are still written, marked PARTIAL).
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from fractions import Fraction

import numpy as np

from . import __version__
from .config import RunConfig, parse_config
from .errors import BudgetExceeded, ThinlabError

EXIT_OK, EXIT_INPUT, EXIT_BUDGET = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def fmt(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, Fraction):
        v = float(v)
    return "%.12g" % float(v)


class Output:
    """CSV with a commented provenance header."""

    def __init__(self, command: str, cfg: RunConfig):
        self.command = command
        self.cfg = cfg
        self.notes: list[str] = []
        self.partial: str | None = None
        self.header: list[str] = []
        self.rows: list[list] = []

    def render(self) -> str:
        buf = io.StringIO()
        if self.partial:
            buf.write(f"# PARTIAL: {self.partial}\n")
        buf.write(f"# thinlab {__version__} {self.command}\n")
        buf.write(f"# group = {self.cfg.name}\n")
        buf.write(f"# config_sha256 = {self.cfg.digest()}\n")
        for n in self.notes:
            buf.write(f"# note: {n}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        for r in self.rows:
            w.writerow([fmt(v) for v in r])
        return buf.getvalue()


# --------------------------------------------------------------------------
# commands


def cmd_ball(cfg, out):
    from .hyperbolic import enumerate_ball

    T = cfg.get("tmax", 20.0)
    out.header = ["word_length", "a", "b", "c", "d", "norm_sq"]
    try:
        ball = enumerate_ball(cfg.system(), T, budget=cfg.budget, workers=cfg.workers)
    except BudgetExceeded as exc:
        ball = exc.partial
        out.partial = f"{exc}; rows are a subset of the ball"
    order = sorted(range(len(ball)), key=lambda k: (int(ball.norm_sq[k]), tuple(int(v) for v in ball.elements[k])))
    for k in order:
        out.rows.append([int(ball.word_length[k])] + [int(v) for v in ball.elements[k]] + [int(ball.norm_sq[k])])
    if out.partial:
        raise BudgetExceeded(out.partial)


def cmd_congruence_scan(cfg, out):
    from .congruence import strong_approximation_scan

    rep = strong_approximation_scan(cfg.system(), cfg.get("primes_up_to", 100))
    out.header = ["p", "closure_size", "sl2_order", "is_full"]
    out.rows = [list(r) for r in rep.rows]


def cmd_spectral_gap(cfg, out):
    from .spectral import build_cayley_operator, spectral_gap

    op = build_cayley_operator(cfg.system(), cfg.require("q"))
    r = spectral_gap(op, cfg.get("tol", 1e-10))
    out.header = ["q", "dim", "lambda1", "gap", "iterations"]
    out.rows = [[r.q, r.dim, r.lambda_1, r.gap, r.iterations]]


def cmd_spectral_flatten(cfg, out):
    from .spectral import flattening_profile

    prof = flattening_profile(cfg.system(), cfg.require("q"), cfg.get("lmax", 50))
    out.header = ["l", "l2_norm"]
    out.rows = [[l + 1, v] for l, v in enumerate(prof.norms)]
    out.notes.append(f"uniform floor |G|^-1/2 = {fmt(prof.floor)}")


def cmd_thermo_delta(cfg, out):
    from .thermo import estimate_delta, eventual_positivity_check

    S = cfg.system()
    pos = eventual_positivity_check(S, 4)
    if not pos.ok:
        out.notes.append(f"eventual positivity not seen for m <= 4 (min S_m tau = {fmt(pos.min_sum)} at {pos.offending})")
    est = estimate_delta(S, cfg.get("depths", [4, 5, 6, 7, 8]), cfg.get("tol", 1e-6))
    out.header = ["depth", "cylinders", "delta_hat", "drift"]
    out.rows = [list(r) for r in est.rows]


def cmd_thermo_sector_gap(cfg, out):
    from .thermo import build_grid, congruence_sector_gap, solve_pressure_zero

    S = cfg.system()
    depth = cfg.get("depth", 5)
    s = cfg.get("s")
    if s is None:
        s = solve_pressure_zero(build_grid(S, 8), 1e-6)[0]
        out.notes.append(f"s defaults to delta_hat at depth 8 = {fmt(s)}")
    r = congruence_sector_gap(S, depth, cfg.require("q"), s, seed=cfg.get("seed", 0))
    out.header = ["q", "dim", "lambda", "sector_radius", "ratio"]
    out.rows = [[r.q, r.dim, r.lam, r.sector_radius, r.ratio]]


def _ladder(cfg):
    from .counting import geometric_ladder

    return geometric_ladder(cfg.get("tmin", 2.0), cfg.get("tmax", 200.0), cfg.get("ladder", 1.2))


def _series(cfg, out):
    from .counting import BallCountSeries, distance_variable, orbit_count
    from .hyperbolic import norm_sq_bound

    ladder = _ladder(cfg)
    try:
        return orbit_count(cfg.system(), ladder, budget=cfg.budget, workers=cfg.workers)
    except BudgetExceeded as exc:
        ball = exc.partial
        out.partial = f"{exc}; counts are lower bounds"
        counts = np.array([int(np.count_nonzero(ball.norm_sq <= norm_sq_bound(T))) for T in ladder])
        return BallCountSeries(ladder, counts, distance_variable(ladder), partial=True)


def cmd_count_ball(cfg, out):
    s = _series(cfg, out)
    out.header = ["T", "count"]
    out.rows = [[T, int(c)] for T, c in zip(s.T, s.counts)]
    if out.partial:
        raise BudgetExceeded(out.partial)


def cmd_count_fit(cfg, out):
    from .counting import exponent_fit

    s = _series(cfg, out)
    fit = exponent_fit(s, burn_in=cfg.get("burn_in", 0.2))
    out.header = ["slope", "intercept", "residual"]
    out.rows = [[fit.slope, fit.intercept, fit.max_residual]]
    out.notes.append(f"fit over {fit.n_points} ladder points; delta_hat = slope / 2 = {fmt(fit.delta)}")
    if out.partial:
        raise BudgetExceeded(out.partial)


def cmd_count_cong(cfg, out):
    from .counting import congruence_count

    tab = congruence_count(cfg.system(), cfg.get("tmax", 200.0), cfg.require("q"), budget=cfg.budget,
                           workers=cfg.workers)
    out.header = ["xi_index", "count", "deviation"]
    dev = tab.relative_deviation()
    out.rows = [[k, int(c), d] for k, (c, d) in enumerate(zip(tab.counts, dev))]
    out.notes.append(f"total = {tab.total}; classes hit = {tab.classes_hit}/{tab.group.size}; "
                     f"max deviation = {fmt(tab.max_deviation)}; l2 deviation = {fmt(tab.l2_deviation)}")


def cmd_sieve_run(cfg, out):
    from .sieve import OrbitPolynomial, run_sieve

    t = cfg.get("t", 1)
    f = OrbitPolynomial.parse(cfg.require("poly"), t)
    z = cfg.get("z", 7.0)
    level = cfg.get("level", z ** (9 * t + 1))
    rep = run_sieve(cfg.system(), f, cfg.get("tmax", 200.0), z, level, budget=cfg.budget, workers=cfg.workers)
    b = rep.bounds
    out.header = ["quantity", "value"]
    out.rows = [
        ["X", rep.seq.X],
        ["sifted_exact", rep.exact],
        ["main_term", rep.main_term],
        ["lower", b.lower if b else None],
        ["upper", b.upper if b else None],
        ["a2_defect", rep.a2_defect.defect],
        ["remainder_total", rep.seq.remainder_total()],
        ["small_values", rep.table.small],
        ["unresolved", rep.table.unresolved],
    ]
    out.rows += [[f"omega_{r}", c] for r, c in sorted(rep.table.by_omega.items())]
    out.notes.append(f"sifting primes {list(rep.seq.primes)}; excluded primes {sorted(rep.seq.excluded)}")
    if rep.note:
        out.notes.append(f"bounds not available: {rep.note}")


COMMANDS = {
    ("ball",): cmd_ball,
    ("congruence", "scan"): cmd_congruence_scan,
    ("spectral", "gap"): cmd_spectral_gap,
    ("spectral", "flatten"): cmd_spectral_flatten,
    ("thermo", "delta"): cmd_thermo_delta,
    ("thermo", "sector-gap"): cmd_thermo_sector_gap,
    ("count", "ball"): cmd_count_ball,
    ("count", "cong"): cmd_count_cong,
    ("count", "fit"): cmd_count_fit,
    ("sieve", "run"): cmd_sieve_run,
}

PARAM_FLAGS = ["tmax", "tmin", "ladder", "q", "primes_up_to", "tol", "lmax", "depths", "depth", "s", "z",
               "level", "poly", "t", "burn_in", "seed"]


def _add_common(p):
    p.add_argument("--gens", "--config", dest="gens", required=True,
                   help="config file with a [group] section, or fixture:NAME")
    p.add_argument("--out", help="output CSV path (default: stdout)")
    p.add_argument("--budget", type=int, help="element budget")
    p.add_argument("--workers", type=int, help="worker threads (overrides THINLAB_WORKERS)")
    for name in PARAM_FLAGS:
        p.add_argument("--" + name.replace("_", "-"), dest=name, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="thinlab", description="Orbit counting, spectra and sieving for subgroups of SL2(Z).")
    parser.add_argument("--version", action="version", version=f"thinlab {__version__}")
    top = parser.add_subparsers(dest="cmd", required=True, parser_class=_Parser)
    groups: dict[str, argparse._SubParsersAction] = {}
    for key in COMMANDS:
        if len(key) == 1:
            _add_common(top.add_parser(key[0]))
            continue
        if key[0] not in groups:
            groups[key[0]] = top.add_parser(key[0]).add_subparsers(dest="sub", required=True, parser_class=_Parser)
        _add_common(groups[key[0]].add_parser(key[1]))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INPUT
    key = (args.cmd,) if getattr(args, "sub", None) is None else (args.cmd, args.sub)
    out = None
    try:
        overrides = {k: getattr(args, k) for k in PARAM_FLAGS}
        if args.budget is not None:
            overrides["budget"] = args.budget
        cfg = parse_config(args.gens, overrides)
        if args.workers is not None:
            if args.workers < 1:
                raise ThinlabError("workers: must be >= 1")
            cfg.workers = args.workers
        out = Output(" ".join(key), cfg)
        code = EXIT_OK
        try:
            COMMANDS[key](cfg, out)
        except BudgetExceeded as exc:
            if out.partial is None:
                out.partial = str(exc)
            code = EXIT_BUDGET
    except ThinlabError as exc:
        print(f"thinlab: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    text = out.render()
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if code == EXIT_BUDGET:
        print(f"thinlab: budget exhausted: {out.partial}", file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
