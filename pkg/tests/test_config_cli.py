import csv
import io
import os
import subprocess
import sys
from pathlib import Path

import pytest

from thinlab.cli import fmt, main
from thinlab.config import ConfigError, parse_config
from thinlab.hyperbolic import exhaustive_ball, norm_sq_bound

GOLDEN = Path(__file__).parent / "golden"
COUNT_ARGS = ["count", "ball", "--gens", "fixture:sanov", "--tmax", "50", "--tmin", "2", "--ladder", "geometric:1.5"]
BALL_ARGS = ["ball", "--gens", "fixture:sanov", "--tmax", "12"]


def write_cfg(tmp_path, body, name="g.ini"):
    p = tmp_path / name
    p.write_text(body)
    return p


def run_cli(args, env_extra=None, cwd=None):
    env = dict(os.environ, **(env_extra or {}))
    return subprocess.run([sys.executable, "-m", "thinlab.cli", *args], env=env, capture_output=True, text=True, cwd=cwd)


def table(text):
    rows = [line for line in text.splitlines() if not line.startswith("#")]
    return list(csv.reader(io.StringIO("\n".join(rows))))


class TestConfig:
    def test_minimal(self, tmp_path):
        cfg = parse_config(write_cfg(tmp_path, "[group]\ngenerators = [[1,2,0,1],[1,0,2,1]]\n"))
        assert cfg.generators == [(1, 2, 0, 1), (1, 0, 2, 1)]
        assert cfg.budget > 0 and cfg.workers == 1
        assert cfg.system().size == 4

    def test_nested_matrix_form(self, tmp_path):
        cfg = parse_config(write_cfg(tmp_path, "[group]\ngenerators = [[[1,2],[0,1]],[[1,0],[2,1]]]\n"))
        assert cfg.generators[1] == (1, 0, 2, 1)

    def test_det_two(self, tmp_path):
        with pytest.raises(ConfigError) as e:
            parse_config(write_cfg(tmp_path, "[group]\ngenerators = [[1,2,0,1],[2,0,0,1]]\n"))
        assert e.value.field == "group.generators[1]"

    def test_non_square_free(self, tmp_path):
        with pytest.raises(ConfigError, match="params.q"):
            parse_config(write_cfg(tmp_path, "[group]\ngenerators = [[1,2,0,1]]\n[params]\nq = 4\n"))

    def test_negative_tolerance(self, tmp_path):
        with pytest.raises(ConfigError, match="params.tol"):
            parse_config(write_cfg(tmp_path, "[group]\ngenerators = [[1,2,0,1]]\n"), {"tol": "-1e-6"})

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            parse_config(tmp_path / "nope.ini")

    def test_bad_budget_and_unknown_key(self, tmp_path):
        with pytest.raises(ConfigError, match="limits.budget"):
            parse_config(write_cfg(tmp_path, "[group]\ngenerators = [[1,2,0,1]]\n[limits]\nbudget = 0\n"))
        with pytest.raises(ConfigError, match="params.colour"):
            parse_config(write_cfg(tmp_path, "[group]\ngenerators = [[1,2,0,1]]\n[params]\ncolour = red\n"))

    def test_parsed_values(self, tmp_path):
        cfg = parse_config(write_cfg(tmp_path, "[group]\ngenerators = [[1,2,0,1]]\n"),
                           {"depths": "4..6", "ladder": "geometric:1.2", "poly": "x11 * x12"})
        assert cfg.get("depths") == [4, 5, 6]
        assert cfg.get("ladder") == 1.2

    def test_workers_env_and_digest(self, tmp_path, monkeypatch):
        path = write_cfg(tmp_path, "[group]\ngenerators = [[1,2,0,1]]\n")
        a = parse_config(path)
        monkeypatch.setenv("THINLAB_WORKERS", "3")
        b = parse_config(path)
        assert b.workers == 3 and a.digest() == b.digest()
        assert parse_config(path, {"tmax": "5"}).digest() != a.digest()

    def test_fixtures_ship(self):
        for name in ("sanov", "sl2z", "schottky"):
            assert parse_config(f"fixture:{name}").name == name


def test_fmt():
    assert fmt(None) == "NA" and fmt(True) == "true" and fmt(12) == "12"
    assert fmt(1 / 3) == "0.333333333333"


class TestCLI:
    @pytest.mark.parametrize("args,golden", [(COUNT_ARGS, "count_ball_sanov.csv"), (BALL_ARGS, "ball_sanov.csv")])
    def test_golden(self, tmp_path, args, golden):
        out = tmp_path / "out.csv"
        assert main([*args, "--out", str(out)]) == 0
        assert out.read_bytes() == (GOLDEN / golden).read_bytes()

    def test_golden_numpy_backend_and_threads(self, tmp_path):
        expected = (GOLDEN / "count_ball_sanov.csv").read_bytes()
        for env in ({"THINLAB_NUMBA": "0"}, {"THINLAB_WORKERS": "4"}):
            out = tmp_path / "o.csv"
            r = run_cli([*COUNT_ARGS, "--out", str(out)], env)
            assert r.returncode == 0, r.stderr
            assert out.read_bytes() == expected

    def test_golden_counts_against_exhaustive(self, sanov):
        words = exhaustive_ball(sanov, 20, 12)
        norms = [sum(v * v for v in g) for g in words]
        rows = table((GOLDEN / "count_ball_sanov.csv").read_text())[1:]
        for T, count in rows:
            if float(T) <= 20:
                assert int(count) == sum(n <= norm_sq_bound(float(T)) for n in norms)
        ball_rows = table((GOLDEN / "ball_sanov.csv").read_text())[1:]
        assert len(ball_rows) == sum(n <= norm_sq_bound(12) for n in norms)
        assert all(int(r[5]) <= norm_sq_bound(12) for r in ball_rows)

    def test_unknown_subcommand(self, capsys):
        assert main(["frobnicate"]) == 1
        assert "usage" in capsys.readouterr().err

    def test_budget_exhaustion(self, tmp_path):
        out = tmp_path / "partial.csv"
        code = main(["ball", "--gens", "fixture:sanov", "--tmax", "1e6", "--budget", "10", "--out", str(out)])
        assert code == 2
        text = out.read_text()
        assert text.startswith("# PARTIAL")
        assert 1 <= len(table(text)) - 1 <= 10
        out2 = tmp_path / "partial2.csv"
        assert main([*COUNT_ARGS[:-4], "--tmax", "1e6", "--budget", "10", "--out", str(out2)]) == 2
        assert out2.read_text().startswith("# PARTIAL")

    def test_precondition_failures(self, tmp_path, capsys):
        assert main(["spectral", "gap", "--gens", "fixture:sanov", "--q", "4"]) == 1
        assert "params.q" in capsys.readouterr().err
        assert main(["spectral", "gap", "--gens", "fixture:sanov", "--q", "2"]) == 1
        bad = write_cfg(tmp_path, "[group]\ngenerators = [[2,0,0,1]]\n")
        assert main(["ball", "--gens", str(bad)]) == 1
        assert "group.generators[0]" in capsys.readouterr().err

    def test_subcommands_smoke(self, capsys):
        cases = [
            (["congruence", "scan", "--gens", "fixture:sanov", "--primes-up-to", "7"], ["p", "closure_size", "sl2_order", "is_full"]),
            (["spectral", "gap", "--gens", "fixture:sanov", "--q", "5"], ["q", "dim", "lambda1", "gap", "iterations"]),
            (["spectral", "flatten", "--gens", "fixture:sanov", "--q", "5", "--lmax", "5"], ["l", "l2_norm"]),
            (["thermo", "delta", "--gens", "fixture:schottky", "--depths", "3..4"], ["depth", "cylinders", "delta_hat", "drift"]),
            (["thermo", "sector-gap", "--gens", "fixture:schottky", "--q", "3", "--depth", "3", "--s", "0.246"],
             ["q", "dim", "lambda", "sector_radius", "ratio"]),
            (["count", "cong", "--gens", "fixture:sl2z", "--q", "3", "--tmax", "30"], ["xi_index", "count", "deviation"]),
            (["count", "fit", "--gens", "fixture:sl2z", "--tmin", "20", "--tmax", "100"], ["slope", "intercept", "residual"]),
            (["sieve", "run", "--gens", "fixture:sl2z", "--poly", "x12", "--t", "1", "--tmax", "50", "--z", "7",
              "--level", "1e5"], ["quantity", "value"]),
        ]
        for args, header in cases:
            assert main(args) == 0, args
            text = capsys.readouterr().out
            assert "# config_sha256 = " in text
            assert table(text)[0] == header

        assert main(cases[0][0]) == 0
        rows = table(capsys.readouterr().out)[1:]
        assert rows[0] == ["2", "1", "6", "false"] and rows[1] == ["3", "24", "24", "true"]

    def test_sieve_report_na(self, capsys):
        main(["sieve", "run", "--gens", "fixture:sl2z", "--poly", "x12", "--tmax", "50", "--z", "7", "--level", "1e5"])
        text = capsys.readouterr().out
        rows = dict(table(text)[1:])
        assert rows["lower"] == "NA" and rows["upper"] == "NA"
        assert "bounds not available" in text
        assert int(rows["X"]) == sum(int(v) for k, v in rows.items() if k.startswith("omega_")) + \
            int(rows["small_values"]) + int(rows["unresolved"])

    def test_deterministic(self, capsys):
        main(BALL_ARGS)
        first = capsys.readouterr().out
        main(BALL_ARGS)
        assert capsys.readouterr().out == first
