"""Brute-force reference implementations and the randomized equivalence suites.

Each oracle is written independently of the production kernels (quadratic
scans, exhaustive enumeration, scipy's Voronoi) so that agreement is evidence
rather than tautology.
"""
from __future__ import annotations

import math
from itertools import combinations

import numpy as np
from scipy.spatial import QhullError, Voronoi

from .rng import generator
from .scores import (
    BirthGrowth,
    Clique,
    KnnLength,
    MaximalPoint,
    RegionA,
    VoronoiLength,
    score_all,
    total_score,
)
from .spatial import FREE, PERIODIC, NeighborIndex, PointConfiguration, Window, neighbors_within


def naive_neighbors(config: PointConfiguration, x, r: float) -> list[int]:
    x = np.asarray(x, dtype=float)
    out = []
    for i, p in enumerate(config.points):
        if np.array_equal(p, x):
            continue
        if float(np.linalg.norm(config.window.displacement(x, p))) <= r:
            out.append(i)
    return out


def dominance_oracle(points: np.ndarray, spec: MaximalPoint) -> np.ndarray:
    """Per-point maximality by an all-pairs scan; -1 for points outside the region."""
    inside = spec.in_region(points)
    out = np.full(len(points), -1, dtype=int)
    for i in range(len(points)):
        if not inside[i]:
            continue
        dominated = any(j != i and inside[j] and np.all(points[j] >= points[i]) for j in range(len(points)))
        out[i] = 0 if dominated else 1
    return out


def sequential_growth_oracle(positions: np.ndarray, times: np.ndarray, v: float) -> np.ndarray:
    """Johnson-Mehl by simulation in birth order: a seed survives iff no earlier survivor's crystal covers it."""
    order = np.argsort(times, kind="stable")
    accepted = np.zeros(len(times), dtype=int)
    kept = []
    for i in order:
        covered = any(np.linalg.norm(positions[i] - positions[j]) <= v * (times[i] - times[j]) for j in kept)
        if not covered:
            accepted[i] = 1
            kept.append(i)
    return accepted


def clique_incidences(points: np.ndarray, k: int, s: float) -> int:
    """Number of pairs (x, C) with C a (k+1)-subset containing x, all pairwise distances at most ``s``."""
    n = len(points)
    count = 0
    for x in range(n):
        rest = [j for j in range(n) if j != x]
        for sub in combinations(rest, k):
            group = (x,) + sub
            if all(np.linalg.norm(points[a] - points[b]) <= s for a, b in combinations(group, 2)):
                count += 1
    return count


def knn_graph_length(points: np.ndarray, k: int) -> float:
    """Total edge length of the undirected kNN graph (ties by index)."""
    n = len(points)
    edges = set()
    for i in range(n):
        others = sorted((float(np.linalg.norm(points[j] - points[i])), j) for j in range(n) if j != i)
        for _, j in others[:k]:
            edges.add((min(i, j), max(i, j)))
    return math.fsum(float(np.linalg.norm(points[a] - points[b])) for a, b in edges)


def voronoi_scores(config: PointConfiguration) -> np.ndarray:
    """Half finite edge length per cell, read off scipy's Voronoi diagram.

    Periodic windows are tiled 5 x 5 and only the central copies are scored.
    """
    pts = config.points
    n = len(pts)
    if config.window.periodic:
        side = config.window.side
        shifts = np.array([(a, b) for a in range(-2, 3) for b in range(-2, 3)], dtype=float) * side
        tiled = np.vstack([pts + s for s in shifts])
        center = int(np.flatnonzero(np.all(shifts == 0, axis=1))[0])
        owner = np.arange(tiled.shape[0]) - center * n
    else:
        tiled = pts
        owner = np.arange(n)
    out = np.zeros(n)
    vor = Voronoi(tiled)
    for (p, q), verts in zip(vor.ridge_points, vor.ridge_vertices):
        if -1 in verts:
            continue
        length = float(np.linalg.norm(vor.vertices[verts[0]] - vor.vertices[verts[1]]))
        for a in (p, q):
            if 0 <= owner[a] < n:
                out[owner[a]] += 0.5 * length
    return out


def kolmogorov_bruteforce(samples) -> float:
    from scipy.special import ndtr

    x = sorted(float(v) for v in samples)
    n = len(x)
    best = 0.0
    for i in range(1, n + 1):
        phi = float(ndtr(x[i - 1]))
        for frac in (i / n, (i - 1) / n):
            best = max(best, abs(frac - phi))
    return best


# --------------------------------------------------------------------------
# suites: each returns (cases, failures)


def suite_neighbors(n_sets: int, seed: int) -> tuple[int, int]:
    rng = generator(seed, 1)
    fails = 0
    for t in range(n_sets):
        mode = PERIODIC if t % 2 else FREE
        d = 1 + t % 3
        win = Window(np.zeros(d), rng.uniform(2, 10, d), mode)
        n = int(rng.integers(0, 200))
        pts = win.lo + rng.random((n, d)) * win.side
        cfg = PointConfiguration(pts, win)
        idx = NeighborIndex(cfg)
        x = win.lo + rng.random(d) * win.side
        r = float(rng.uniform(0, 3))
        fails += neighbors_within(idx, cfg, x, r) != naive_neighbors(cfg, x, r)
    return n_sets, fails


def suite_maximal(n_sets: int, seed: int) -> tuple[int, int]:
    rng = generator(seed, 2)
    fails = 0
    for t in range(n_sets):
        d = 2 + t % 2
        lam = float(rng.uniform(5, 50))
        region = RegionA.linear(d) if t % 3 == 0 else RegionA(tuple(rng.uniform(0.1, 0.9, d - 1) / (d - 1)), 1.0)
        spec = MaximalPoint(region, lam)
        win = Window.cube(lam, d)
        n = int(rng.integers(1, 21))
        pts = win.lo + rng.random((n, d)) * win.side
        cfg = PointConfiguration(pts, win)
        vals, _, used = score_all(spec, cfg)
        got = np.where(used, vals, -1).astype(int)
        fails += not np.array_equal(got, dominance_oracle(pts, spec))
    return n_sets, fails


def suite_birth_growth(n_sets: int, seed: int) -> tuple[int, int]:
    rng = generator(seed, 3)
    fails = 0
    for t in range(n_sets):
        d = 1 + t % 3
        win = Window.cube(float(rng.uniform(4, 40)), d)
        n = int(rng.integers(1, 51))
        pts = win.lo + rng.random((n, d)) * win.side
        times = rng.uniform(0, 3, n)
        v = float(rng.uniform(0.2, 3))
        cfg = PointConfiguration(pts, win, times)
        vals, _, _ = score_all(BirthGrowth(v), cfg)
        fails += not np.array_equal(vals.astype(int), sequential_growth_oracle(pts, times, v))
    return n_sets, fails


def suite_clique(n_sets: int, seed: int) -> tuple[int, int]:
    rng = generator(seed, 4)
    fails = 0
    for t in range(n_sets):
        d = 1 + t % 3
        win = Window.cube(float(rng.uniform(1, 20)), d)
        n = int(rng.integers(0, 21))
        pts = win.lo + rng.random((n, d)) * win.side
        k = 1 + t % 3
        s = float(rng.uniform(0.3, 2.5))
        cfg = PointConfiguration(pts, win)
        tot = total_score(Clique(k, s), cfg)
        fails += not math.isclose((k + 1) * tot, clique_incidences(pts, k, s), rel_tol=0, abs_tol=1e-9)
    return n_sets, fails


def suite_knn(n_sets: int, seed: int) -> tuple[int, int]:
    rng = generator(seed, 5)
    fails = 0
    for t in range(n_sets):
        d = 1 + t % 3
        win = Window.cube(float(rng.uniform(5, 50)), d)
        n = int(rng.integers(2, 60))
        pts = win.lo + rng.random((n, d)) * win.side
        k = 1 + t % 3
        tot = total_score(KnnLength(k), PointConfiguration(pts, win))
        fails += not math.isclose(tot, knn_graph_length(pts, k), rel_tol=1e-12, abs_tol=1e-12)
    return n_sets, fails


def suite_voronoi(n_sets: int, seed: int) -> tuple[int, int]:
    rng = generator(seed, 6)
    fails = 0
    cases = 0
    for t in range(n_sets):
        mode = PERIODIC if t % 2 else FREE
        win = Window(np.zeros(2), rng.uniform(2, 10, 2), mode)
        n = int(rng.integers(4 if mode == FREE else 1, 13))
        pts = win.lo + rng.random((n, 2)) * win.side
        cfg = PointConfiguration(pts, win)
        try:
            ref = voronoi_scores(cfg)
        except QhullError:
            continue
        cases += 1
        got, _, _ = score_all(VoronoiLength(), cfg)
        fails += not np.allclose(got, ref, rtol=1e-9, atol=1e-9 * float(np.max(win.side)))
    return cases, fails


def suite_kolmogorov(n_sets: int, seed: int) -> tuple[int, int]:
    from .stats import kolmogorov_distance

    rng = generator(seed, 7)
    fails = 0
    for _ in range(n_sets):
        x = rng.standard_normal(int(rng.integers(2, 60)))
        fails += kolmogorov_distance(x) != kolmogorov_bruteforce(x)
    return n_sets, fails


SUITES = {
    "neighbors_within": suite_neighbors,
    "maximal_layer": suite_maximal,
    "birth_growth": suite_birth_growth,
    "clique_totals": suite_clique,
    "knn_totals": suite_knn,
    "voronoi": suite_voronoi,
    "kolmogorov": suite_kolmogorov,
}


def run_all(n_sets: int = 500, seed: int = 0) -> list[dict]:
    rows = []
    for name, fn in SUITES.items():
        cases, fails = fn(n_sets, seed)
        rows.append({"suite": name, "cases": cases, "passed": cases - fails, "failed": fails})
    return rows
