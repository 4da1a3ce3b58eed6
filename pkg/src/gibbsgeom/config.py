"""Run configuration files: flat ``section.key = value`` lines.

Values are JSON literals (numbers, strings, lists, ``true``/``false``);
anything that fails to parse as JSON is taken as a bare string. ``#``
starts a comment. Every key is checked against a fixed schema and errors
name the key path and line number.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from .errors import InvalidParams
from .potentials import AreaInteraction, HardCore, StraussPair, admissibility_margin
from .sampler import SamplerOptions
from .scores import (
    BirthGrowth,
    Clique,
    Constant,
    InsuranceClaim,
    KnnLength,
    MaximalPoint,
    RegionA,
    VoronoiLength,
)
from .spatial import FREE, PERIODIC
from .stats import ExperimentSpec, Quadrature, default_r_cut

KINDS = ("sample", "variance-scan", "clt-scan", "sigma2", "tails", "mismatch", "probe", "oracle-check")


class ConfigError(InvalidParams):
    pass


def _num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _pos(v):
    return _num(v) and v > 0 and math.isfinite(v)


def _nonneg(v):
    return _num(v) and v >= 0 and math.isfinite(v)


def _posint(v):
    return isinstance(v, int) and not isinstance(v, bool) and v >= 1


def _seed(v):
    return isinstance(v, int) and not isinstance(v, bool) and 0 <= v < 2**64


def _str(*choices):
    return lambda v: isinstance(v, str) and (not choices or v in choices)


def _numlist(v):
    return isinstance(v, list) and len(v) > 0 and all(_num(x) for x in v)


POTENTIALS = ("hardcore", "strauss", "area")
SCORES = ("clique", "knn", "voronoi", "maximal", "birth_growth", "insurance", "constant")

SCHEMA: dict[str, tuple[Callable[[Any], bool], str]] = {
    "potential.kind": (_str(*POTENTIALS), f"one of {', '.join(POTENTIALS)}"),
    "potential.r": (_pos, "a positive number"),
    "potential.a": (_nonneg, "a nonnegative number"),
    "model.tau": (_pos, "a positive number"),
    "model.beta": (_nonneg, "a nonnegative number"),
    "model.d": (_posint, "a positive integer"),
    "model.boundary": (_str(FREE, PERIODIC), "free or periodic"),
    "score.kind": (_str(*SCORES), f"one of {', '.join(SCORES)}"),
    "score.k": (_posint, "a positive integer"),
    "score.s": (_pos, "a positive number"),
    "score.v": (_pos, "a positive number"),
    "score.cap": (_pos, "a positive number"),
    "score.value": (_nonneg, "a nonnegative number"),
    "score.slopes": (_numlist, "a nonempty list of numbers"),
    "score.intercept": (_pos, "a positive number"),
    "grid.lambdas": (_numlist, "a nonempty list of numbers"),
    "mc.n_reps": (_posint, "a positive integer"),
    "mc.seed": (_seed, "an integer in [0, 2^64)"),
    "rho.c": (_pos, "a positive number"),
    "rho.grid": (_numlist, "a nonempty list of numbers (\"inf\" allowed)"),
    "quadrature.r_cut": (_pos, "a positive number"),
    "quadrature.nodes": (_posint, "a positive integer"),
    "quadrature.n": (_posint, "a positive integer"),
    "quadrature.lam": (_pos, "a positive number"),
    "quadrature.method": (_str("insertion", "pooled"), "insertion or pooled"),
    "quadrature.boundary": (_str(FREE, PERIODIC), "free or periodic"),
    "sampler.max_padding": (_pos, "a positive number"),
    "sampler.max_clan_points": (_posint, "a positive integer"),
    "sampler.marks": (_str("uniform", "exponential"), "uniform or exponential"),
    "tails.mode": (_str("stabilization_radius", "clan_diameter"), "stabilization_radius or clan_diameter"),
    "tails.grid": (_numlist, "a nonempty list of numbers"),
    "probe.r": (_pos, "a positive number"),
    "probe.t": (_pos, "a positive number"),
    "probe.n_outer": (_posint, "a positive integer"),
    "probe.n_inner": (_posint, "a positive integer"),
    "probe.sweeps": (_posint, "a positive integer"),
    "probe.moves": (_posint, "a positive integer"),
    "oracle.n_sets": (_posint, "a positive integer"),
}

# grid entries may be written as the string "inf"
_INF_LISTS = ("rho.grid",)


@dataclass
class RawConfig:
    values: dict
    lines: dict = field(default_factory=dict)
    path: str = "<string>"

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def where(self, key: str) -> str:
        line = self.lines.get(key)
        return f"{self.path}:{line}" if line else self.path

    def fail(self, key: str, msg: str):
        raise ConfigError(f"{self.where(key)}: {key}: {msg}")


def parse_text(text: str, path: str = "<string>") -> RawConfig:
    values, lines = {}, {}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{no}: expected 'key = value', got {raw.strip()!r}")
        key, _, val = (p.strip() for p in line.partition("="))
        if key not in SCHEMA:
            raise ConfigError(f"{path}:{no}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{path}:{no}: duplicate key {key!r} (first set on line {lines[key]})")
        try:
            parsed = json.loads(val)
        except json.JSONDecodeError:
            parsed = val
        if key in _INF_LISTS and isinstance(parsed, list):
            parsed = [math.inf if x == "inf" else x for x in parsed]
        check, expect = SCHEMA[key]
        if not check(parsed):
            raise ConfigError(f"{path}:{no}: {key}: expected {expect}, got {val!r}")
        values[key] = parsed
        lines[key] = no
    return RawConfig(values, lines, path)


def parse_file(path: str) -> RawConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_text(fh.read(), path)


def _require(cfg: RawConfig, key: str):
    if key not in cfg.values:
        raise ConfigError(f"{cfg.path}: missing required key {key!r}")
    return cfg.values[key]


def build_potential(cfg: RawConfig):
    kind = _require(cfg, "potential.kind")
    r = _require(cfg, "potential.r")
    if kind == "hardcore":
        return HardCore(float(r))
    if kind == "strauss":
        return StraussPair(float(r), float(cfg.get("potential.a", 1.0)))
    return AreaInteraction(float(r))


def build_score(cfg: RawConfig, d: int, lam: float):
    kind = _require(cfg, "score.kind")
    k = cfg.get("score.k", 1)
    try:
        if kind == "clique":
            return Clique(k, float(_require(cfg, "score.s")))
        if kind == "knn":
            return KnnLength(k)
        if kind == "voronoi":
            if d != 2:
                cfg.fail("score.kind", "voronoi needs model.d = 2")
            return VoronoiLength()
        if kind == "maximal":
            if "score.slopes" in cfg.values:
                region = RegionA(tuple(cfg.values["score.slopes"]), float(cfg.get("score.intercept", 1.0)))
            else:
                region = RegionA.linear(d)
            if region.d != d:
                cfg.fail("score.slopes", f"needs {d - 1} slopes for model.d = {d}")
            return MaximalPoint(region, lam)
        if kind == "birth_growth":
            return BirthGrowth(float(_require(cfg, "score.v")))
        if kind == "insurance":
            return InsuranceClaim(k, float(cfg.get("score.cap", 1.0)))
        return Constant(float(cfg.get("score.value", 1.0)))
    except ConfigError:
        raise
    except InvalidParams as exc:
        cfg.fail("score.kind", str(exc))


@dataclass
class RunConfig:
    kind: str
    raw: RawConfig
    experiment: ExperimentSpec
    seed: int
    out: str
    threads: int
    allow_near_critical: bool
    margin: float

    @property
    def rho_rule(self) -> dict:
        c = self.experiment.rho_c
        return {
            "formula": "rho = c * ln(lambda)",
            "c": c if c is not None else "calibrated from the clan-diameter tail fit",
        }

    def quadrature(self) -> Quadrature:
        exp = self.experiment
        r_cut = self.raw.get("quadrature.r_cut")
        if r_cut is None:
            r_cut = default_r_cut(exp.score, exp.psi, exp.tau, exp.d)
        return Quadrature(
            r_cut=float(r_cut),
            nodes=int(self.raw.get("quadrature.nodes", exp.nodes)),
            n=int(self.raw.get("quadrature.n", exp.n_reps)),
            lam=float(self.raw.get("quadrature.lam", exp.lambdas[-1])),
            boundary_mode=self.raw.get("quadrature.boundary", exp.boundary_mode),
        )


def validate(raw: RawConfig, kind: str, seed: Optional[int], out: str, threads: int, allow_near_critical: bool) -> RunConfig:
    """Build and check every parameter before any sampling happens."""
    if kind not in KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}")
    if threads < 1:
        raise ConfigError("--threads must be >= 1")
    d = int(raw.get("model.d", 2))
    tau = float(_require(raw, "model.tau")) if kind != "oracle-check" else float(raw.get("model.tau", 1.0))
    beta = float(raw.get("model.beta", 1.0))
    if kind == "oracle-check" and "potential.kind" not in raw.values:
        psi = HardCore(1.0)
    else:
        psi = build_potential(raw)
    lambdas = raw.get("grid.lambdas", [100.0])
    if any(not _pos(x) for x in lambdas):
        raw.fail("grid.lambdas", "values must be positive")
    if any(b <= a for a, b in zip(lambdas, lambdas[1:])):
        raw.fail("grid.lambdas", "values must be strictly ascending")
    sc = build_score(raw, d, float(lambdas[-1])) if "score.kind" in raw.values else Constant(1.0)
    seed = int(raw.get("mc.seed", 0)) if seed is None else int(seed)
    if not 0 <= seed < 2**64:
        raise ConfigError(f"seed {seed} outside [0, 2^64)")
    margin = admissibility_margin(psi, tau, beta, d)
    near = allow_near_critical
    if margin >= 1 and beta > 0 and not near and kind != "oracle-check":
        raise ConfigError(
            f"admissibility margin {margin:.6g} >= 1 for (tau={tau}, beta={beta}); "
            "rerun with --allow-near-critical to override"
        )
    opts = SamplerOptions(
        max_padding=raw.get("sampler.max_padding"),
        max_clan_points=int(raw.get("sampler.max_clan_points", 100_000)),
        near_critical=near,
        marks=raw.get("sampler.marks"),
    )
    n_reps = int(raw.get("mc.n_reps", 100))
    try:
        exp = ExperimentSpec(
            psi=psi,
            tau=tau,
            beta=beta,
            score=sc,
            lambdas=tuple(float(x) for x in lambdas),
            n_reps=n_reps,
            seed=seed,
            d=d,
            boundary_mode=raw.get("model.boundary", FREE),
            rho_c=raw.get("rho.c"),
            r_cut=raw.get("quadrature.r_cut"),
            nodes=int(raw.get("quadrature.nodes", 16)),
            options=opts,
        )
    except InvalidParams as exc:
        raise ConfigError(f"{raw.path}: {exc}") from None
    if kind == "clt-scan" and n_reps < 100:
        raw.fail("mc.n_reps", "clt-scan needs at least 100 replications")
    if kind == "probe":
        r = raw.get("probe.r")
        t = raw.get("probe.t", r)
        if r is None:
            raise ConfigError(f"{raw.path}: missing required key 'probe.r'")
        if t < r:
            raw.fail("probe.t", "must be >= probe.r")
    return RunConfig(kind, raw, exp, seed, out, threads, near, margin)
