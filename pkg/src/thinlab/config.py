"""Run configuration: an INI file for the group and limits, overridable from the command line.

Example::

    [group]
    name = sanov
    generators = [[1, 2, 0, 1], [1, 0, 2, 1]]

    [limits]
    budget = 20000000
    workers = 1

    [params]
    tmax = 200

Every value is validated before any computation starts; a failure names the
offending field.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .congruence import SquareFreeModulus
from .errors import PreconditionError
from .hyperbolic import GeneratorSystem
from .sieve import OrbitPolynomial

DEFAULT_BUDGET = 50_000_000


class ConfigError(PreconditionError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def _positive_float(name, v, *, allow_zero=False):
    try:
        x = float(v)
    except (TypeError, ValueError):
        raise ConfigError(name, f"expected a number, got {v!r}") from None
    if not math.isfinite(x) or x < 0 or (x == 0 and not allow_zero):
        raise ConfigError(name, f"must be {'non-negative' if allow_zero else 'positive'}, got {v!r}")
    return x


def _int(name, v, minimum):
    try:
        x = int(str(v), 10)
    except ValueError:
        raise ConfigError(name, f"expected an integer, got {v!r}") from None
    if x < minimum:
        raise ConfigError(name, f"must be >= {minimum}, got {x}")
    return x


def _modulus(name, v):
    x = _int(name, v, 1)
    try:
        SquareFreeModulus.of(x)
    except PreconditionError as exc:
        raise ConfigError(name, str(exc)) from None
    return x


def _ladder(name, v):
    kind, _, ratio = str(v).partition(":")
    if kind != "geometric":
        raise ConfigError(name, f"only 'geometric:R' ladders are supported, got {v!r}")
    r = _positive_float(name, ratio)
    if r <= 1:
        raise ConfigError(name, f"ratio must exceed 1, got {r}")
    return r


def _depths(name, v):
    text = str(v)
    try:
        if ".." in text:
            lo, hi = text.split("..")
            out = list(range(int(lo), int(hi) + 1))
        else:
            out = [int(x) for x in text.split(",")]
    except ValueError:
        raise ConfigError(name, f"expected 'a..b' or a comma list, got {v!r}") from None
    if not out or min(out) < 1:
        raise ConfigError(name, f"depths must be >= 1, got {v!r}")
    return sorted(set(out))


def _poly(name, v):
    try:
        return OrbitPolynomial.parse(str(v)).text
    except PreconditionError as exc:
        raise ConfigError(name, str(exc)) from None


def _real(name, v):
    try:
        x = float(v)
    except (TypeError, ValueError):
        raise ConfigError(name, f"expected a number, got {v!r}") from None
    if not math.isfinite(x):
        raise ConfigError(name, f"must be finite, got {v!r}")
    return x


PARAM_TYPES = {
    "tmax": lambda n, v: _positive_float(n, v),
    "tmin": lambda n, v: _positive_float(n, v),
    "ladder": _ladder,
    "q": _modulus,
    "primes_up_to": lambda n, v: _int(n, v, 0),
    "tol": lambda n, v: _positive_float(n, v),
    "lmax": lambda n, v: _int(n, v, 1),
    "depths": _depths,
    "depth": lambda n, v: _int(n, v, 1),
    "s": _real,
    "z": lambda n, v: _positive_float(n, v),
    "level": lambda n, v: _positive_float(n, v),
    "poly": _poly,
    "t": lambda n, v: _int(n, v, 1),
    "burn_in": lambda n, v: _positive_float(n, v, allow_zero=True),
    "seed": lambda n, v: _int(n, v, 0),
}


@dataclass
class RunConfig:
    source: str
    name: str
    generators: list[tuple[int, int, int, int]]
    budget: int = DEFAULT_BUDGET
    workers: int = 1
    params: dict = field(default_factory=dict)

    def system(self) -> GeneratorSystem:
        return GeneratorSystem.from_base(self.generators, self.name)

    def get(self, key, default=None):
        return self.params.get(key, default)

    def require(self, key):
        if key not in self.params:
            raise ConfigError(f"params.{key}", "required for this command")
        return self.params[key]

    def digest(self) -> str:
        """sha256 of everything that affects numeric output (not the worker count)."""
        blob = json.dumps(
            {"generators": self.generators, "budget": self.budget,
             "params": {k: repr(v) for k, v in sorted(self.params.items())}},
            sort_keys=True,
        )
        return hashlib.sha256(blob.encode()).hexdigest()


def resolve_path(spec: str) -> Path:
    """A filesystem path, or ``fixture:NAME`` for a shipped fixture."""
    if spec.startswith("fixture:"):
        name = spec.split(":", 1)[1]
        res = resources.files("thinlab") / "fixtures" / f"{name}.ini"
        if not res.is_file():
            raise ConfigError("gens", f"no shipped fixture named {name!r}")
        return Path(str(res))
    return Path(spec)


def _parse_generators(text: str):
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("group.generators", f"not a JSON list of 4-entry rows ({exc.msg})") from None
    if not isinstance(raw, list) or not raw:
        raise ConfigError("group.generators", "expected a non-empty list")
    out = []
    for k, row in enumerate(raw):
        if isinstance(row, list) and len(row) == 2 and all(isinstance(r, list) for r in row):
            row = row[0] + row[1]
        if not (isinstance(row, list) and len(row) == 4 and all(isinstance(v, int) and not isinstance(v, bool) for v in row)):
            raise ConfigError(f"group.generators[{k}]", f"expected four integers, got {row!r}")
        a, b, c, d = row
        if a * d - b * c != 1:
            raise ConfigError(f"group.generators[{k}]", f"det = {a * d - b * c}, expected 1")
        out.append((a, b, c, d))
    try:
        GeneratorSystem.from_base(out)
    except PreconditionError as exc:
        raise ConfigError("group.generators", str(exc)) from None
    return out


def parse_config(path, overrides: dict | None = None) -> RunConfig:
    """Read and validate a config file; ``overrides`` (from flags) win over ``[params]``."""
    p = resolve_path(str(path))
    if not p.is_file():
        raise ConfigError("gens", f"config file {str(path)!r} not found")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read(p)
    except configparser.Error as exc:
        raise ConfigError("file", f"malformed config: {exc}") from None
    if not cp.has_option("group", "generators"):
        raise ConfigError("group.generators", "missing")
    gens = _parse_generators(cp.get("group", "generators"))
    name = cp.get("group", "name", fallback=p.stem)
    budget = _int("limits.budget", cp.get("limits", "budget", fallback=str(DEFAULT_BUDGET)), 1)
    workers = _int("limits.workers", cp.get("limits", "workers", fallback="1"), 1)
    env = os.environ.get("THINLAB_WORKERS")
    if env:
        workers = _int("THINLAB_WORKERS", env, 1)
    raw = dict(cp.items("params")) if cp.has_section("params") else {}
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v
    params = {}
    for k, v in raw.items():
        if k == "budget":
            budget = _int("limits.budget", v, 1)
            continue
        if k not in PARAM_TYPES:
            raise ConfigError(f"params.{k}", "unknown parameter")
        params[k] = PARAM_TYPES[k](f"params.{k}", v)
    return RunConfig(str(path), name, gens, budget, workers, params)
