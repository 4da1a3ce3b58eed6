"""Monte Carlo estimators for variance asymptotics and normal approximation.

Every estimator is a deterministic function of its inputs and a master seed.
Replication ``i`` at grid level ``l`` always draws from the stream derived
from ``(seed, l, i)``, and all reductions are exact (``math.fsum``) so that
results do not depend on how replications are scheduled.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import gammaincc, ndtr

from .errors import (
    ClanOverflow,
    DecayNotDetected,
    DegenerateVariance,
    InsufficientTail,
    InvalidParams,
    WindowTooSmall,
)
from .potentials import Potential, admissibility_margin, boltzmann, local_energy, pair_insertion_energy
from .rng import derive_seed, generator
from .sampler import SamplerOptions, sample_conditional, sample_gibbs
from .scores import (
    TRANSLATION_INVARIANT,
    BirthGrowth,
    Clique,
    Constant,
    KnnLength,
    MaximalPoint,
    ScoreSpec,
    VoronoiLength,
    score,
    score_all,
)
from .spatial import FREE, PERIODIC, PointConfiguration, Window, sphere_area

MISMATCH_TARGET = 1e-3
TAIL_BAND = (1e-3, 0.5)


# --------------------------------------------------------------------------
# experiment description


@dataclass(frozen=True)
class ExperimentSpec:
    """A reproducible Monte Carlo experiment over a grid of window volumes.

    ``rho_c`` fixes the truncation rule ``rho = rho_c * ln(lambda)``; when it
    is ``None`` the constant is calibrated from the clan-diameter tail.
    """

    psi: Potential
    tau: float
    beta: float
    score: ScoreSpec
    lambdas: tuple
    n_reps: int
    seed: int
    d: int = 2
    boundary_mode: str = FREE
    rho_c: Optional[float] = None
    r_cut: Optional[float] = None
    nodes: int = 16
    options: SamplerOptions = SamplerOptions()

    def __post_init__(self):
        lams = tuple(float(x) for x in np.atleast_1d(self.lambdas))
        if not lams or any(not x > 0 for x in lams):
            raise InvalidParams("lambda grid must hold positive values")
        if any(b <= a for a, b in zip(lams, lams[1:])):
            raise InvalidParams("lambda grid must be strictly ascending")
        object.__setattr__(self, "lambdas", lams)
        if self.n_reps < 2:
            raise InvalidParams("n_reps must be >= 2")
        if not self.tau > 0 or not self.beta >= 0:
            raise InvalidParams("tau must be positive and beta nonnegative")
        if self.boundary_mode not in (FREE, PERIODIC):
            raise InvalidParams(f"unknown boundary mode {self.boundary_mode!r}")
        if self.rho_c is not None and not self.rho_c > 0:
            raise InvalidParams("rho.c must be positive")
        if self.nodes < 1:
            raise InvalidParams("quadrature needs at least one node")
        if isinstance(self.score, VoronoiLength) and self.d != 2:
            raise InvalidParams("Voronoi length is defined for d = 2 only")
        if isinstance(self.score, MaximalPoint) and self.score.region.d != self.d:
            raise InvalidParams("region dimension differs from the experiment's")

    @property
    def margin(self) -> float:
        return admissibility_margin(self.psi, self.tau, self.beta, self.d)

    def window(self, lam: float) -> Window:
        return Window.cube(lam, self.d, self.boundary_mode)

    def score_at(self, lam: float) -> ScoreSpec:
        if isinstance(self.score, MaximalPoint):
            return replace(self.score, lam=lam)
        return self.score

    @property
    def sampler_options(self) -> SamplerOptions:
        if isinstance(self.score, BirthGrowth) and self.options.marks is None:
            return replace(self.options, marks="uniform")
        return self.options


@dataclass(frozen=True)
class SummaryRecord:
    lam: float
    n_reps: int
    mean: float
    var: float
    var_se: float
    var_over_lambda: float
    d_k: float
    mismatch: float
    d_k_se: float = math.nan
    rho: float = math.nan
    error: Optional[str] = None


@dataclass(frozen=True)
class TailEstimate:
    grid: np.ndarray
    survival: np.ndarray
    se: np.ndarray
    slope: float
    intercept: float
    r2: float
    n: int


class Replicate(NamedTuple):
    total: float
    values: np.ndarray
    radii: np.ndarray
    clan: np.ndarray
    max_clan: int


# --------------------------------------------------------------------------
# parallel plumbing


def map_ordered(fn: Callable, tasks: Sequence, workers: int = 1) -> list:
    """``[fn(t) for t in tasks]``, optionally spread over worker processes."""
    if workers <= 1 or len(tasks) < 2:
        return [fn(t) for t in tasks]
    chunk = max(1, len(tasks) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=chunk))


def _replicate(task) -> Replicate:
    exp, li, rep = task
    lam = exp.lambdas[li]
    sample = sample_gibbs(exp.psi, exp.tau, exp.beta, exp.window(lam), derive_seed(exp.seed, li, rep), exp.sampler_options)
    values, radii, used = score_all(exp.score_at(lam), sample.config)
    values = np.where(used, values, 0.0)
    return Replicate(math.fsum(values), values, radii, sample.clan_diameter, int(sample.diagnostics["max_clan_size"]))


def run_level(exp: ExperimentSpec, li: int, workers: int = 1, n_reps: Optional[int] = None) -> list[Replicate]:
    n = exp.n_reps if n_reps is None else n_reps
    return map_ordered(_replicate, [(exp, li, i) for i in range(n)], workers)


# --------------------------------------------------------------------------
# basic statistics


def exact_mean(x) -> float:
    x = np.asarray(x, dtype=float)
    return math.fsum(x) / x.size


def sample_variance(x) -> float:
    """Unbiased variance with exactly rounded sums (order independent)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 2:
        raise InvalidParams("variance needs at least two values")
    m = exact_mean(x)
    return math.fsum((x - m) ** 2) / (n - 1)


def jackknife_variance(x) -> tuple[float, float]:
    """Unbiased variance and its delete-1 jackknife standard error."""
    x = np.asarray(x, dtype=float)
    n = x.size
    var = sample_variance(x)
    if n < 3:
        return var, math.nan
    e = x - exact_mean(x)
    ss = math.fsum(e * e)
    # leave-one-out variance of the remaining n-1 values, in closed form
    loo = (ss - n / (n - 1) * e * e) / (n - 2)
    mloo = math.fsum(loo) / n
    se = math.sqrt((n - 1) / n * math.fsum((loo - mloo) ** 2))
    return var, se


def jackknife(columns: np.ndarray, estimator: Callable[[np.ndarray, int], np.ndarray]) -> tuple[float, float]:
    """Delete-1 jackknife for a smooth function of column means.

    ``estimator(means, n)`` must accept a 2-D array of mean vectors (one per
    row) and the sample size those means came from.
    """
    cols = np.asarray(columns, dtype=float)
    n = cols.shape[0]
    full = np.array([[math.fsum(c) / n for c in cols.T]])
    theta = float(estimator(full, n)[0])
    if n < 3:
        return theta, math.nan
    sums = full * n
    loo = (sums - cols) / (n - 1)
    th = estimator(loo, n - 1)
    m = math.fsum(th) / n
    return theta, math.sqrt((n - 1) / n * math.fsum((th - m) ** 2))


def standardize(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return x - x
    var = sample_variance(x)
    if var == 0:
        raise DegenerateVariance("replicates have zero variance")
    return (x - exact_mean(x)) / math.sqrt(var)


def kolmogorov_distance(samples) -> float:
    """Sup distance between the empirical distribution of ``samples`` and N(0, 1)."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    if n == 0:
        raise InvalidParams("need at least one sample")
    if n >= 2 and x[0] == x[-1]:
        raise DegenerateVariance("all samples are equal")
    phi = ndtr(x)
    i = np.arange(1, n + 1)
    return float(max(np.max(np.abs(i / n - phi)), np.max(np.abs((i - 1) / n - phi))))


def standardized_kolmogorov(x, n_boot: int = 200, seed: int = 0) -> tuple[float, float]:
    """d_K of self-standardized replicates and a bootstrap standard error."""
    z = standardize(x)
    dk = kolmogorov_distance(z)
    rng = generator(seed, 0xD4)
    x = np.asarray(x, dtype=float)
    boots = []
    for _ in range(n_boot):
        xb = x[rng.integers(0, x.size, x.size)]
        try:
            boots.append(kolmogorov_distance(standardize(xb)))
        except DegenerateVariance:
            boots.append(1.0)
    return dk, float(np.std(boots, ddof=1)) if n_boot > 1 else math.nan


# --------------------------------------------------------------------------
# tails


def fit_survival(values, grid) -> TailEstimate:
    """Empirical survival on ``grid`` with a log-linear fit over the usable band."""
    v = np.sort(np.asarray(values, dtype=float))
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0 or np.any(np.diff(grid) <= 0):
        raise InvalidParams("threshold grid must be strictly ascending")
    n = v.size
    if n == 0:
        raise InsufficientTail("no values to estimate a tail from")
    surv = (n - np.searchsorted(v, grid, side="right")) / n
    se = np.sqrt(surv * (1 - surv) / n)
    band = (surv >= TAIL_BAND[0]) & (surv <= TAIL_BAND[1])
    if np.count_nonzero(band) < 3:
        return TailEstimate(grid, surv, se, math.nan, math.nan, math.nan, n)
    t, ly = grid[band], np.log(surv[band])
    slope, intercept = np.polyfit(t, ly, 1)
    resid = ly - (slope * t + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return TailEstimate(grid, surv, se, float(slope), float(intercept), r2, n)


def default_grid(values, points: int = 40) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    top = float(np.max(v)) if v.size else 0.0
    if top <= 0:
        return np.linspace(0.0, 1.0, points)
    return np.linspace(0.0, top, points + 1)[:-1]


def tail_estimate(mode: str, experiment: ExperimentSpec, grid=None, workers: int = 1, level: int = -1) -> TailEstimate:
    """Pooled survival of per-point stabilization radii or clan diameters at one grid level.

    Radii and diameters are collected at the points of the sampled process,
    so the pooled law is the Palm law (the insertion-weighted one).
    """
    if mode not in ("stabilization_radius", "clan_diameter"):
        raise InvalidParams(f"unknown tail mode {mode!r}")
    li = level % len(experiment.lambdas)
    reps = run_level(experiment, li, workers)
    key = "radii" if mode == "stabilization_radius" else "clan"
    pooled = np.concatenate([getattr(r, key) for r in reps]) if reps else np.empty(0)
    if grid is None:
        grid = default_grid(pooled[np.isfinite(pooled)])
    est = fit_survival(pooled, grid)
    if pooled.size and np.all((est.survival == 0) | (est.survival == 1)):
        # a deterministic cutoff: survival drops from 1 to 0 within one grid step
        return TailEstimate(est.grid, est.survival, est.se, -math.inf, 0.0, 1.0, est.n)
    if not math.isfinite(est.slope):
        raise InsufficientTail(f"fewer than 3 grid points with survival in {TAIL_BAND}")
    return est


# --------------------------------------------------------------------------
# truncation


def calibrate_rho_c(experiment: ExperimentSpec, clan_diameters: np.ndarray) -> float:
    """Smallest ``c`` whose rule ``rho = c ln(lambda)`` predicts mismatch below the target.

    The prediction is ``tau * lambda * S(rho)`` with ``S`` the fitted
    log-linear clan-diameter survival at the largest lambda.
    """
    D = np.asarray(clan_diameters, dtype=float)
    lam = experiment.lambdas[-1]
    log_lam = max(math.log(lam), 1.0)
    if D.size == 0 or not np.any(D > 0):
        return 1.0
    est = fit_survival(D, default_grid(D))
    if math.isfinite(est.slope) and est.slope < 0:
        rho = (math.log(MISMATCH_TARGET / (experiment.tau * lam)) - est.intercept) / est.slope
        rho = max(rho, float(np.max(D)))
    else:
        rho = 2.0 * float(np.max(D))
    return max(rho / log_lam, 1e-9)


def rho_for(c: float, lam: float) -> float:
    return c * max(math.log(lam), 1.0)


def _mismatch(reps: Sequence[Replicate], rho: float) -> np.ndarray:
    out = np.zeros(len(reps), dtype=bool)
    for i, r in enumerate(reps):
        if math.isinf(rho):
            continue
        out[i] = math.fsum(r.values[r.clan <= rho]) != r.total
    return out


def truncation_mismatch(experiment: ExperimentSpec, rho_grid, workers: int = 1, reps_by_level=None) -> list[dict]:
    """Per (lambda, rho): fraction of replicates where truncation changes the total."""
    rho_grid = [float(r) for r in rho_grid]
    if any(b <= a for a, b in zip(rho_grid, rho_grid[1:])) or any(r < 0 for r in rho_grid):
        raise InvalidParams("rho grid must be nonnegative and strictly ascending")
    rows = []
    for li, lam in enumerate(experiment.lambdas):
        reps = reps_by_level[li] if reps_by_level is not None else run_level(experiment, li, workers)
        n = len(reps)
        for rho in rho_grid:
            p = float(np.count_nonzero(_mismatch(reps, rho))) / n
            rows.append({"lambda": lam, "rho": rho, "n_reps": n, "mismatch": p, "se": math.sqrt(p * (1 - p) / n)})
    return rows


# --------------------------------------------------------------------------
# variance and CLT scans


def summarize_level(experiment: ExperimentSpec, li: int, reps: Sequence[Replicate], rho: float) -> SummaryRecord:
    lam = experiment.lambdas[li]
    totals = np.array([r.total for r in reps])
    n = totals.size
    var, var_se = jackknife_variance(totals)
    if var > 0:
        dk, dk_se = standardized_kolmogorov(totals, seed=derive_seed(experiment.seed, li, 2**31))
    else:
        dk, dk_se = math.nan, math.nan
    mism = float(np.count_nonzero(_mismatch(reps, rho))) / n
    return SummaryRecord(lam, n, exact_mean(totals), var, var_se, var / lam, dk, mism, dk_se, rho)


def variance_scan(experiment: ExperimentSpec, workers: int = 1, keep: Optional[list] = None) -> list[SummaryRecord]:
    """One SummaryRecord per lambda; a sampler failure voids that level only.

    If ``keep`` is a list, the per-level replicate lists are appended to it.
    """
    levels: list = []
    errors: list = []
    for li in range(len(experiment.lambdas)):
        try:
            levels.append(run_level(experiment, li, workers))
            errors.append(None)
        except ClanOverflow as exc:
            levels.append(None)
            errors.append(f"ClanOverflow: {exc}")
    c = experiment.rho_c
    if c is None:
        pooled = [r.clan for reps in levels if reps for r in reps]
        c = calibrate_rho_c(experiment, np.concatenate(pooled) if pooled else np.empty(0))
    out = []
    for li, reps in enumerate(levels):
        lam = experiment.lambdas[li]
        if reps is None:
            nan = math.nan
            out.append(SummaryRecord(lam, 0, nan, nan, nan, nan, nan, nan, nan, rho_for(c, lam), errors[li]))
        else:
            out.append(summarize_level(experiment, li, reps, rho_for(c, lam)))
    if keep is not None:
        keep.extend(levels)
    return out


def clt_scan(experiment: ExperimentSpec, workers: int = 1, records: Optional[list] = None) -> list[dict]:
    """Kolmogorov distance of standardized totals per lambda, with trend flags."""
    if experiment.n_reps < 100:
        raise InvalidParams("clt_scan needs n_reps >= 100")
    recs = records if records is not None else variance_scan(experiment, workers)
    rows = []
    for rec in recs:
        if rec.error is None and not rec.var > 0:
            raise DegenerateVariance(f"zero variance at lambda={rec.lam}")
        rows.append({"lambda": rec.lam, "n_reps": rec.n_reps, "d_k": rec.d_k, "d_k_se": rec.d_k_se})
    dks = [r["d_k"] for r in rows]
    for i, r in enumerate(rows):
        r["nonmonotone"] = bool(i > 0 and dks[i] > dks[i - 1])
    return rows


# --------------------------------------------------------------------------
# correlation functions and the limiting variance


def _stab_guess(spec: ScoreSpec, tau: float, d: int) -> float:
    if isinstance(spec, Clique):
        return spec.s
    if isinstance(spec, Constant):
        return 0.0
    if isinstance(spec, KnnLength):
        return 3.0 * (spec.k / tau) ** (1.0 / d)
    if isinstance(spec, VoronoiLength):
        return 3.0 / math.sqrt(tau)
    raise InvalidParams(f"{type(spec).__name__} is not supported by the correlation estimators")


def _check_invariant(spec: ScoreSpec) -> None:
    if not isinstance(spec, TRANSLATION_INVARIANT) or isinstance(spec, BirthGrowth):
        raise InvalidParams("correlation estimators need an unmarked translation-invariant score")


def default_r_cut(spec: ScoreSpec, psi: Potential, tau: float, d: int) -> float:
    return 2.0 * _stab_guess(spec, tau, d) + 2.0 * psi.range


@dataclass(frozen=True)
class Quadrature:
    """Radial midpoint rule on ``[0, r_cut]`` with ``nodes`` cells.

    ``n`` is the number of Monte Carlo samples; ``lam`` and
    ``boundary_mode`` set the sampling window of the pooled estimator.
    """

    r_cut: float
    nodes: int = 16
    n: int = 500
    lam: Optional[float] = None
    boundary_mode: str = FREE

    def __post_init__(self):
        if not self.r_cut > 0 or self.nodes < 1 or self.n < 2:
            raise InvalidParams("quadrature needs r_cut > 0, nodes >= 1, n >= 2")

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(0.0, self.r_cut, self.nodes + 1)

    @property
    def midpoints(self) -> np.ndarray:
        e = self.edges
        return 0.5 * (e[1:] + e[:-1])


def insertion_window(spec: ScoreSpec, psi: Potential, tau: float, d: int, reach: float = 0.0) -> Window:
    side = 2.0 * (reach + _stab_guess(spec, tau, d) + psi.range) + 1.0
    return Window(np.zeros(d), np.full(d, side))


def _radius_ok(res, y_norm: float, window: Window) -> bool:
    return res.radius + y_norm <= float(np.min(window.side)) / 2


class _InsertionSamples:
    """Gibbs samples around the origin with the insertion weights and scores at 0."""

    def __init__(self, spec, psi, tau, beta, d, n, seed, reach):
        _check_invariant(spec)
        self.spec, self.psi, self.tau, self.beta, self.d = spec, psi, tau, beta, d
        self.window = insertion_window(spec, psi, tau, d, reach)
        self.seed = seed
        self.n = n
        self.configs = []
        self.w0 = np.empty(n)
        self.xi0 = np.empty(n)
        bad = 0
        origin = np.zeros(d)
        for i in range(n):
            cfg = sample_gibbs(psi, tau, beta, self.window, derive_seed(seed, 0, i)).config
            self.configs.append(cfg)
            self.w0[i] = boltzmann(beta, local_energy(psi, origin, cfg))
            res = score(spec, origin, cfg)
            self.xi0[i] = res.value
            bad += not _radius_ok(res, 0.0, self.window)
        if bad > 0.01 * n:
            raise WindowTooSmall(f"{bad} of {n} stabilization radii at the origin leave the sampling window")

    def pair_terms(self, y: np.ndarray) -> tuple[np.ndarray, int]:
        """``xi(0, P+y) xi(y, P+0) exp(-beta Delta({0, y}, P))`` per sample."""
        out = np.empty(self.n)
        bad = 0
        origin = np.zeros(self.d)
        ynorm = float(np.linalg.norm(y))
        for i, cfg in enumerate(self.configs):
            yi = y[i] if y.ndim == 2 else y
            w = boltzmann(self.beta, pair_insertion_energy(self.psi, origin, yi, cfg))
            if w == 0 or isinstance(self.spec, Constant):
                out[i] = w * float(getattr(self.spec, "value", 0.0)) ** 2
                continue
            r0 = score(self.spec, origin, cfg.with_point(yi))
            ry = score(self.spec, yi, cfg.with_point(origin))
            bad += not (_radius_ok(r0, 0.0, self.window) and _radius_ok(ry, ynorm, self.window))
            out[i] = r0.value * ry.value * w
        return out, bad


def estimate_c_point(spec: ScoreSpec, psi: Potential, tau: float, beta: float, n: int, seed: int, d: int = 2) -> dict:
    """``c(0) = E xi(0, P) e^{-beta Delta(0, P)}`` and the same for ``xi^2``."""
    S = _InsertionSamples(spec, psi, tau, beta, d, n, seed, 0.0)
    a = S.xi0 * S.w0
    b = S.xi0**2 * S.w0
    se = lambda v: math.sqrt(sample_variance(v) / n)
    return {"c": exact_mean(a), "c2": exact_mean(b), "se_c": se(a), "se_c2": se(b), "n": n}


def estimate_c_pair(spec: ScoreSpec, psi: Potential, tau: float, beta: float, y, n: int, seed: int, d: int = 2) -> dict:
    """``c(0, y) = c(0) c(y) - E xi(0, P+y) xi(y, P+0) e^{-beta Delta({0,y}, P)}``."""
    y = np.asarray(y, dtype=float).reshape(d)
    S = _InsertionSamples(spec, psi, tau, beta, d, n, seed, float(np.linalg.norm(y)))
    m, bad = S.pair_terms(y)
    if bad > 0.01 * n:
        raise WindowTooSmall(f"{bad} of {n} stabilization radii leave the sampling window")
    a = S.xi0 * S.w0
    # c(y) reuses c(0) by translation invariance
    val, se = jackknife(np.column_stack([a, m]), lambda M, k: M[:, 0] ** 2 - M[:, 1])
    return {"c_pair": val, "se": se, "n": n}


def _random_directions(rng, n: int, d: int) -> np.ndarray:
    g = rng.standard_normal((n, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def _tail_bound(r: np.ndarray, prof: np.ndarray, se: np.ndarray, r_cut: float, d: int, tau: float) -> tuple[float, float]:
    """Fit ``|c(0, r)| ~ A e^{-b r}`` over significant shells; bound the integral beyond ``r_cut``."""
    # fit only past the correlation peak, where the decay is
    peak = int(np.argmax(np.abs(prof)))
    sig = (np.abs(prof) > 2 * se) & (np.abs(prof) > 0) & (np.arange(prof.size) >= peak)
    if np.count_nonzero(sig) < 2:
        # nothing resolvable beyond the peak: the tail is below the noise
        return 0.0, math.nan
    slope, icpt = np.polyfit(r[sig], np.log(np.abs(prof[sig])), 1)
    if slope >= 0:
        return math.inf, float(slope)
    b = -slope
    # int_{r_cut}^inf A e^{-b r} S_d r^{d-1} dr
    tail = math.exp(icpt) * sphere_area(d) * math.gamma(d) * gammaincc(d, b * r_cut) / b**d
    return tau * float(tail), float(slope)


def _decay_check(prof, se, c2) -> None:
    tol = 1e-4 * abs(c2)
    last = slice(max(len(prof) - 2, 0), len(prof))
    p, s = np.abs(prof[last]), se[last]
    if np.all((p > 3 * s) & (p > tol)):
        raise DecayNotDetected("the pair correlation shows no decay before r_cut")


def _sigma2_insertion(spec, psi, tau, beta, quad: Quadrature, seed, d) -> dict:
    rng = generator(seed, 1)
    dirs = _random_directions(rng, quad.n, d)
    S = _InsertionSamples(spec, psi, tau, beta, d, quad.n, seed, quad.r_cut)
    a = S.xi0 * S.w0
    b = S.xi0**2 * S.w0
    cols = [a, b]
    bad = 0
    for rj in quad.midpoints:
        m, nb = S.pair_terms(rj * dirs)
        bad += nb
        cols.append(m)
    if bad > 0.01 * quad.n * quad.nodes:
        raise WindowTooSmall(f"{bad} pair evaluations saw radii leaving the sampling window")
    h = quad.r_cut / quad.nodes
    weights = sphere_area(d) * quad.midpoints ** (d - 1) * h

    def est(M, k):
        pair = M[:, :1] ** 2 - M[:, 2:]
        return M[:, 1] - tau * pair @ weights

    C = np.column_stack(cols)
    sigma2, se = jackknife(C, est)
    prof, prof_se = [], []
    for j in range(quad.nodes):
        v, s = jackknife(C[:, [0, 2 + j]], lambda M, k: M[:, 0] ** 2 - M[:, 1])
        prof.append(v)
        prof_se.append(s if math.isfinite(s) else 0.0)
    prof, prof_se = np.asarray(prof), np.asarray(prof_se)
    c2 = exact_mean(b)
    _decay_check(prof, prof_se, c2)
    tail, slope = _tail_bound(quad.midpoints, prof, prof_se, quad.r_cut, d, tau)
    return {
        "sigma2": sigma2, "se": se, "tail_bound": tail, "decay_slope": slope,
        "c": exact_mean(a), "c2": c2, "profile_r": quad.midpoints, "profile": prof, "profile_se": prof_se,
        "method": "insertion", "n": quad.n,
    }


def _pair_shell_sums(cfg: PointConfiguration, values: np.ndarray, inner: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """``sum_{x inner} sum_{y != x} xi(x) xi(y)`` over pairs whose distance falls in each shell."""
    out = np.zeros(len(edges) - 1)
    n = len(cfg)
    if n < 2:
        return out
    win = cfg.window
    r_cut = float(edges[-1])
    if win.periodic:
        tree = cKDTree(cfg.points - win.lo, boxsize=win.side)
    else:
        tree = cKDTree(cfg.points)
    pairs = tree.query_pairs(r_cut, output_type="ndarray")
    if pairs.size == 0:
        return out
    i, j = pairs[:, 0], pairs[:, 1]
    dist = np.linalg.norm(win.displacement(cfg.points[i], cfg.points[j]), axis=1)
    prod = values[i] * values[j]
    weight = prod * (inner[i].astype(float) + inner[j].astype(float))
    shell = np.clip(np.searchsorted(edges, dist, side="left") - 1, 0, len(edges) - 2)
    for s in range(len(out)):
        out[s] = math.fsum(weight[shell == s])
    return out


def _pooled_replicate(task):
    spec, psi, tau, beta, quad, seed, d, margin, i = task
    win = Window.cube(quad.lam, d, quad.boundary_mode)
    cfg = sample_gibbs(psi, tau, beta, win, derive_seed(seed, 0, i)).config
    values, radii, _ = score_all(spec, cfg)
    if win.periodic:
        inner = np.ones(len(cfg), dtype=bool)
        qvol = win.volume
    else:
        inner = np.all(np.abs(cfg.points - win.center) <= win.side / 2 - margin, axis=1) if len(cfg) else np.zeros(0, bool)
        qvol = float(np.prod(win.side - 2 * margin))
    stab = _stab_guess(spec, tau, d)
    bad = int(np.count_nonzero(radii[inner] > stab)) if not win.periodic and len(cfg) else 0
    s1 = math.fsum(values[inner]) / (tau * qvol)
    s2 = math.fsum(values[inner] ** 2) / (tau * qvol)
    shells = _pair_shell_sums(cfg, values, inner, quad.edges) / (tau**2 * qvol)
    return np.concatenate([[s1, s2], shells]), bad, int(np.count_nonzero(inner))


def _sigma2_pooled(spec, psi, tau, beta, quad: Quadrature, seed, d, workers) -> dict:
    _check_invariant(spec)
    if quad.lam is None:
        raise InvalidParams("the pooled estimator needs a window volume (quadrature lam)")
    side = quad.lam ** (1.0 / d)
    stab = _stab_guess(spec, tau, d)
    if quad.boundary_mode == PERIODIC:
        if quad.r_cut >= side / 2 or stab >= side / 2:
            raise WindowTooSmall("r_cut and the stabilization reach must stay below half the period")
        margin = 0.0
    else:
        margin = quad.r_cut + stab
        if 2 * margin >= side:
            raise WindowTooSmall("window too small for r_cut plus the stabilization margin")
    tasks = [(spec, psi, tau, beta, quad, seed, d, margin, i) for i in range(quad.n)]
    res = map_ordered(_pooled_replicate, tasks, workers)
    C = np.vstack([r[0] for r in res])
    bad = sum(r[1] for r in res)
    seen = sum(r[2] for r in res)
    if seen and bad > 0.01 * seen:
        raise WindowTooSmall(f"{bad} of {seen} inner points have radii beyond the boundary margin")
    ball = [sphere_area(d) / d * (b**d - a**d) for a, b in zip(quad.edges[:-1], quad.edges[1:])]
    ball = np.asarray(ball)

    def c0_sq(M, k):
        # unbiased square of the mean from the first two raw moments
        return (k * M[:, 0] ** 2 - M[:, -1]) / (k - 1)

    C = np.column_stack([C, C[:, 0] ** 2])
    nsh = quad.nodes

    def est(M, k):
        pair_int = M[:, 2 : 2 + nsh].sum(axis=1) - c0_sq(M, k) * ball.sum()
        return M[:, 1] + tau * pair_int

    sigma2, se = jackknife(C, est)
    prof, prof_se = [], []
    for j in range(nsh):
        idx = [0, 2 + j, C.shape[1] - 1]
        v, s = jackknife(C[:, idx], lambda M, k, j=j: c0_sq(M[:, [0, 2]], k) - M[:, 1] / ball[j])
        prof.append(v)
        prof_se.append(s if math.isfinite(s) else 0.0)
    prof, prof_se = np.asarray(prof), np.asarray(prof_se)
    c2 = exact_mean(C[:, 1])
    _decay_check(prof, prof_se, c2)
    tail, slope = _tail_bound(quad.midpoints, prof, prof_se, quad.r_cut, d, tau)
    return {
        "sigma2": sigma2, "se": se, "tail_bound": tail, "decay_slope": slope,
        "c": exact_mean(C[:, 0]), "c2": c2, "profile_r": quad.midpoints, "profile": prof, "profile_se": prof_se,
        "method": "pooled", "n": quad.n,
    }


def estimate_sigma2(
    spec: ScoreSpec,
    psi: Potential,
    tau: float,
    beta: float,
    quadrature: Quadrature,
    seed: int,
    d: int = 2,
    method: str = "insertion",
    workers: int = 1,
) -> dict:
    """Limiting variance density ``c^{xi^2}(0) - tau * int c(0, y) dy``.

    ``method="insertion"`` inserts 0 and ``y`` into samples centered at the
    origin and integrates the pair correlation over radial midpoints (one
    random direction per sample, common across nodes). ``method="pooled"``
    estimates the same integral from all pairs of points of samples on a
    window of volume ``quadrature.lam``, which is far less noisy.
    """
    if method == "insertion":
        return _sigma2_insertion(spec, psi, tau, beta, quadrature, seed, d)
    if method == "pooled":
        return _sigma2_pooled(spec, psi, tau, beta, quadrature, seed, d, workers)
    raise InvalidParams(f"unknown sigma2 method {method!r}")


# --------------------------------------------------------------------------
# non-degeneracy probe


def _probe_outer(task):
    spec, psi, tau, beta, r, t, n_inner, n_sweeps, moves, seed, d, o = task
    side_r, side_t = r ** (1.0 / d), t ** (1.0 / d)
    reach = (_stab_guess(spec, tau, d) if not isinstance(spec, Constant) else 0.0) + psi.range + 1.0
    outer = Window(np.zeros(d), np.full(d, side_t + 2 * reach))
    inner = Window(np.zeros(d), np.full(d, side_r))
    qt = Window(np.zeros(d), np.full(d, side_t))
    cfg = sample_gibbs(psi, tau, beta, outer, derive_seed(seed, 0, o)).config
    pts = cfg.points
    ins = inner.contains(pts) if len(cfg) else np.zeros(0, bool)
    boundary = PointConfiguration(pts[~ins], outer)
    start = pts[ins]
    sums = np.empty(n_inner)
    for j in range(n_inner):
        draw = sample_conditional(
            psi, tau, beta, inner, boundary, n_sweeps, moves, derive_seed(seed, 1, o, j), initial=start
        )
        full = PointConfiguration(np.vstack([boundary.points, draw.points]), outer)
        if isinstance(spec, Constant):
            sums[j] = spec.value * np.count_nonzero(qt.contains(full.points)) if len(full) else 0.0
            continue
        values, _, used = score_all(spec, full)
        keep = used & qt.contains(full.points) if len(full) else used
        sums[j] = math.fsum(values[keep])
    return sample_variance(sums)


def conditional_variance_probe(
    spec: ScoreSpec,
    psi: Potential,
    tau: float,
    beta: float,
    r: float,
    t: float,
    n_outer: int,
    n_inner: int,
    seed: int,
    d: int = 2,
    n_sweeps: int = 20,
    moves_per_sweep: Optional[int] = None,
    workers: int = 1,
) -> dict:
    """Average over outside configurations of the conditional variance of the score sum over ``Q_t``.

    ``r`` and ``t`` are volumes of centered cubes. Every inner chain starts
    from the exact sample's own inner points, which are an exact draw from
    the conditional law, so the chain stays in stationarity from the start.
    """
    if not (t >= r > 0):
        raise InvalidParams("need t >= r > 0")
    if n_outer < 2 or n_inner < 2:
        raise InvalidParams("need n_outer >= 2 and n_inner >= 2")
    _check_invariant(spec)
    if moves_per_sweep is None:
        moves_per_sweep = max(10, int(math.ceil(2 * tau * r)))
    if isinstance(spec, Constant) and spec.value == 0:
        return {"estimate": 0.0, "se": 0.0, "n_outer": n_outer, "n_inner": n_inner}
    tasks = [(spec, psi, tau, beta, r, t, n_inner, n_sweeps, moves_per_sweep, seed, d, o) for o in range(n_outer)]
    v = np.asarray(map_ordered(_probe_outer, tasks, workers))
    return {"estimate": exact_mean(v), "se": math.sqrt(sample_variance(v) / n_outer), "n_outer": n_outer, "n_inner": n_inner}


# --------------------------------------------------------------------------
# closed forms for the clique edge score on Poisson input


def lens_area(s: float, h: float) -> float:
    """Area of the intersection of two planar discs of radius ``s`` at distance ``h``."""
    if h >= 2 * s:
        return 0.0
    return 2 * s * s * math.acos(h / (2 * s)) - 0.5 * h * math.sqrt(4 * s * s - h * h)


def poisson_edge_sigma2(tau: float, s: float) -> float:
    """``sigma^2`` of the k=1 clique score over Poisson(tau) in the plane: ``m/2 + m^2``."""
    m = tau * math.pi * s * s
    return m / 2 + m * m


def poisson_edge_c_pair(tau: float, s: float, h: float) -> float:
    """``c(0, y)`` at ``|y| = h`` for the k=1 clique score over planar Poisson(tau)."""
    m = tau * math.pi * s * s
    o = tau * lens_area(s, h)
    if h <= s:
        return m * m / 4 - ((m + 1) ** 2 + o) / 4
    return -o / 4
