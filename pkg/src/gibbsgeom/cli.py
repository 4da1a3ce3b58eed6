"""Command-line experiment driver.

``gibbsgeom <kind> --config <path> [--out <dir>] [--seed <u64>] [--threads <n>] [--allow-near-critical]``

Exit codes: 0 success, 2 validation failure, 3 sampler or estimator
failure (partial results are still written and flagged), 4 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import platform
import sys
import time
from typing import Iterable, Optional

import numpy as np
import scipy

from . import __version__
from .config import KINDS, ConfigError, RunConfig, parse_file, validate
from .errors import GibbsGeomError, InvalidParams
from .oracles import run_all
from .rng import derive_seed
from .sampler import sample_gibbs
from .scores import score_all
from .stats import (
    clt_scan,
    conditional_variance_probe,
    estimate_sigma2,
    tail_estimate,
    truncation_mismatch,
    variance_scan,
)

EXIT_OK, EXIT_INVALID, EXIT_SAMPLER, EXIT_IO = 0, 2, 3, 4

SCHEMAS = {
    "variance-scan": ["lambda", "n_reps", "mean", "var", "var_se", "var_over_lambda", "d_k", "mismatch"],
    "clt-scan": ["lambda", "n_reps", "d_k", "d_k_se", "nonmonotone"],
    "sigma2": ["method", "n", "sigma2", "se", "tau_sigma2", "tau_sigma2_se", "c", "c2", "tail_bound", "decay_slope"],
    "sigma2-profile": ["r", "c_pair", "se"],
    "tails": ["threshold", "survival", "se"],
    "mismatch": ["lambda", "rho", "n_reps", "mismatch", "se"],
    "probe": ["r", "t", "n_outer", "n_inner", "estimate", "se"],
    "oracle-check": ["suite", "cases", "passed", "failed"],
}


def fmt(v) -> str:
    """Shortest text that round-trips the value exactly."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_text(header: list[str], rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(row[h]) for h in header])
    return buf.getvalue()


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if math.isfinite(f) else repr(f)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


# --------------------------------------------------------------------------
# experiment kinds: each returns (tables, results, error)


def _run_variance(rc: RunConfig):
    recs = variance_scan(rc.experiment, rc.threads)
    rows = [
        {
            "lambda": r.lam, "n_reps": r.n_reps, "mean": r.mean, "var": r.var, "var_se": r.var_se,
            "var_over_lambda": r.var_over_lambda, "d_k": r.d_k, "mismatch": r.mismatch,
        }
        for r in recs
    ]
    errs = [f"lambda={r.lam}: {r.error}" for r in recs if r.error]
    extra = {"rho": {fmt(r.lam): r.rho for r in recs}, "d_k_se": {fmt(r.lam): r.d_k_se for r in recs}}
    return {"variance_scan.csv": csv_text(SCHEMAS["variance-scan"], rows)}, extra, "; ".join(errs) or None


def _run_clt(rc: RunConfig):
    recs = variance_scan(rc.experiment, rc.threads)
    errs = [f"lambda={r.lam}: {r.error}" for r in recs if r.error]
    rows = clt_scan(rc.experiment, rc.threads, records=recs)
    flags = [r["lambda"] for r in rows if r["nonmonotone"]]
    return {"clt_scan.csv": csv_text(SCHEMAS["clt-scan"], rows)}, {"nonmonotone_at": flags}, "; ".join(errs) or None


def _run_sigma2(rc: RunConfig):
    exp = rc.experiment
    quad = rc.quadrature()
    method = rc.raw.get("quadrature.method", "insertion")
    res = estimate_sigma2(exp.score, exp.psi, exp.tau, exp.beta, quad, exp.seed, exp.d, method, rc.threads)
    row = {
        "method": res["method"], "n": res["n"], "sigma2": res["sigma2"], "se": res["se"],
        "tau_sigma2": exp.tau * res["sigma2"], "tau_sigma2_se": exp.tau * res["se"],
        "c": res["c"], "c2": res["c2"], "tail_bound": res["tail_bound"], "decay_slope": res["decay_slope"],
    }
    prof = [{"r": r, "c_pair": c, "se": s} for r, c, s in zip(res["profile_r"], res["profile"], res["profile_se"])]
    tables = {
        "sigma2.csv": csv_text(SCHEMAS["sigma2"], [row]),
        "sigma2_profile.csv": csv_text(SCHEMAS["sigma2-profile"], prof),
    }
    quad_echo = {"r_cut": quad.r_cut, "nodes": quad.nodes, "n": quad.n, "lam": quad.lam, "boundary": quad.boundary_mode}
    return tables, {"quadrature": quad_echo}, None


def _run_tails(rc: RunConfig):
    mode = rc.raw.get("tails.mode", "clan_diameter")
    grid = rc.raw.get("tails.grid")
    est = tail_estimate(mode, rc.experiment, grid, rc.threads)
    rows = [{"threshold": t, "survival": s, "se": e} for t, s, e in zip(est.grid, est.survival, est.se)]
    fit = {"slope": est.slope, "intercept": est.intercept, "r2": est.r2, "n_values": est.n, "lambda": rc.experiment.lambdas[-1]}
    return {"tails.csv": csv_text(SCHEMAS["tails"], rows)}, {"mode": mode, "fit": fit}, None


def _run_mismatch(rc: RunConfig):
    grid = rc.raw.get("rho.grid", [0.0, 0.5, 1.0, 2.0, 4.0, 8.0, math.inf])
    rows = truncation_mismatch(rc.experiment, grid, rc.threads)
    return {"mismatch.csv": csv_text(SCHEMAS["mismatch"], rows)}, {}, None


def _run_probe(rc: RunConfig):
    exp, raw = rc.experiment, rc.raw
    r = float(raw.get("probe.r"))
    t = float(raw.get("probe.t", r))
    n_outer = int(raw.get("probe.n_outer", 100))
    n_inner = int(raw.get("probe.n_inner", 20))
    res = conditional_variance_probe(
        exp.score, exp.psi, exp.tau, exp.beta, r, t, n_outer, n_inner, exp.seed, exp.d,
        n_sweeps=int(raw.get("probe.sweeps", 20)), moves_per_sweep=raw.get("probe.moves"), workers=rc.threads,
    )
    row = {"r": r, "t": t, "n_outer": n_outer, "n_inner": n_inner, "estimate": res["estimate"], "se": res["se"]}
    return {"probe.csv": csv_text(SCHEMAS["probe"], [row])}, {}, None


def _run_sample(rc: RunConfig):
    exp = rc.experiment
    d = exp.d
    header = ["lambda", "rep", "index"] + [f"x{j + 1}" for j in range(d)] + ["mark", "clan_diameter", "score", "radius"]
    rows, diags = [], []
    for li, lam in enumerate(exp.lambdas):
        for rep in range(exp.n_reps):
            s = sample_gibbs(exp.psi, exp.tau, exp.beta, exp.window(lam), derive_seed(exp.seed, li, rep), exp.sampler_options)
            vals, radii, _ = score_all(exp.score_at(lam), s.config)
            diags.append({"lambda": lam, "rep": rep, **s.diagnostics})
            marks = s.config.marks if s.config.marks is not None else np.zeros(len(s.config))
            for i, p in enumerate(s.config.points):
                row = {"lambda": lam, "rep": rep, "index": i, "mark": marks[i], "clan_diameter": s.clan_diameter[i],
                       "score": vals[i], "radius": radii[i]}
                row.update({f"x{j + 1}": p[j] for j in range(d)})
                rows.append(row)
    return {"sample.csv": csv_text(header, rows)}, {"diagnostics": diags}, None


def _run_oracles(rc: RunConfig):
    rows = run_all(int(rc.raw.get("oracle.n_sets", 500)), rc.seed)
    failed = sum(r["failed"] for r in rows)
    err = f"{failed} oracle cases failed" if failed else None
    summary = {"cases": sum(r["cases"] for r in rows), "failed": failed}
    return {"oracle_check.csv": csv_text(SCHEMAS["oracle-check"], rows)}, summary, err


RUNNERS = {
    "variance-scan": _run_variance,
    "clt-scan": _run_clt,
    "sigma2": _run_sigma2,
    "tails": _run_tails,
    "mismatch": _run_mismatch,
    "probe": _run_probe,
    "sample": _run_sample,
    "oracle-check": _run_oracles,
}


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gibbsgeom", description="Gibbs point process experiments")
    p.add_argument("kind", choices=KINDS)
    p.add_argument("--config", required=True, help="key = value configuration file")
    p.add_argument("--out", default=None, help="output directory (env GIBBSGEOM_OUT)")
    p.add_argument("--seed", default=None, help="master seed, unsigned 64-bit (env GIBBSGEOM_SEED)")
    p.add_argument("--threads", type=int, default=1, help="worker processes for replications")
    p.add_argument("--allow-near-critical", action="store_true", help="run even when the admissibility margin is >= 1")
    return p


def _parse_seed(text: Optional[str]) -> Optional[int]:
    if text is None or text == "":
        return None
    try:
        v = int(text, 0)
    except ValueError:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {text!r}") from None
    if not 0 <= v < 2**64:
        raise ConfigError(f"seed {v} outside [0, 2^64)")
    return v


def _versions() -> dict:
    return {"gibbsgeom": __version__, "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()}


def _write(out: str, files: dict) -> None:
    os.makedirs(out, exist_ok=True)
    for name, text in files.items():
        with open(os.path.join(out, name), "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    err = sys.stderr
    try:
        raw = parse_file(args.config)
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=err)
        return EXIT_IO
    except ConfigError as exc:
        print(f"error: {exc}", file=err)
        return EXIT_INVALID
    try:
        seed = _parse_seed(args.seed)
        if seed is None:
            seed = _parse_seed(os.environ.get("GIBBSGEOM_SEED"))
        out = args.out or os.environ.get("GIBBSGEOM_OUT") or os.path.join("gibbsgeom-out", args.kind)
        rc = validate(raw, args.kind, seed, out, args.threads, args.allow_near_critical)
    except InvalidParams as exc:
        print(f"error: {exc}", file=err)
        return EXIT_INVALID
    print(f"admissibility margin: {rc.margin!r}", file=err)
    print(f"rho rule: {json.dumps(_jsonable(rc.rho_rule))}", file=err)

    start = time.perf_counter()
    status, error, tables, results = "ok", None, {}, {}
    try:
        tables, results, error = RUNNERS[args.kind](rc)
        if error:
            status = "partial" if args.kind != "oracle-check" else "failed"
    except GibbsGeomError as exc:
        status, error = "failed", f"{type(exc).__name__}: {exc}"
    summary = {
        "kind": args.kind,
        "config": {"path": os.path.basename(args.config), "values": raw.values},
        "seed": rc.seed,
        "versions": _versions(),
        "admissibility_margin": rc.margin,
        "rho_rule": rc.rho_rule,
        "threads": rc.threads,
        "near_critical": rc.allow_near_critical,
        "status": status,
        "error": error,
        "results": results,
        "outputs": sorted(tables) + ["summary.json"],
        "wall_clock_seconds": time.perf_counter() - start,
    }
    files = dict(tables)
    files["summary.json"] = json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n"
    try:
        _write(rc.out, files)
    except OSError as exc:
        print(f"error: cannot write outputs: {exc}", file=err)
        return EXIT_IO
    if error:
        print(f"error: {error}", file=err)
        return EXIT_SAMPLER
    print(f"wrote {', '.join(sorted(files))} to {rc.out}", file=err)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
