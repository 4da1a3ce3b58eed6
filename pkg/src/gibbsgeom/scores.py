"""Score functionals with per-point stabilization radii.

Every score is evaluated at a point ``x`` against the configuration without
``x``; internally ``x`` is appended so that each kernel sees the full point
set and the identifier of ``x``. Distance ties are broken by identifier.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from typing import Optional, Union

import numpy as np

from .errors import DomainError, InvalidParams, MissingClanData, MissingMarks
from .spatial import NeighborIndex, PointConfiguration, Window, as_point, lattice_shifts
from .voronoi import half_finite_perimeter

INF = math.inf


# --------------------------------------------------------------------------
# specs


@dataclass(frozen=True)
class Clique:
    """``(k+1)^-1`` times the number of k-simplices of the Rips complex at scale ``s`` containing x."""

    k: int
    s: float

    def __post_init__(self):
        if self.k < 1 or not self.s > 0:
            raise InvalidParams("clique score needs k >= 1 and s > 0")


@dataclass(frozen=True)
class KnnLength:
    """Half the length of the undirected k-nearest-neighbor edges at x."""

    k: int

    def __post_init__(self):
        if self.k < 1:
            raise InvalidParams("k must be >= 1")


@dataclass(frozen=True)
class VoronoiLength:
    """Half the finite edge length of the planar Voronoi cell of x."""


@dataclass(frozen=True)
class RegionA:
    """``{(v, w): v in [0,1]^(d-1), 0 <= w <= F(v)}`` with affine decreasing ``F``.

    ``F(v) = intercept - sum(slopes_i * v_i)``; ``slopes`` holds the
    magnitudes of the (negative) partial derivatives.
    """

    slopes: tuple
    intercept: float = 1.0

    MAX_SLOPE = 8.0

    def __post_init__(self):
        sl = tuple(float(a) for a in self.slopes)
        if not sl:
            raise InvalidParams("region needs d >= 2 (at least one slope)")
        if any(not (0 < a <= self.MAX_SLOPE) for a in sl):
            raise InvalidParams(f"slope magnitudes must lie in (0, {self.MAX_SLOPE}]")
        if not (0 < self.intercept <= 1) or self.intercept - sum(sl) < -1:
            raise InvalidParams("F must satisfy |F| <= 1 on the unit cube with F(0) > 0")
        object.__setattr__(self, "slopes", sl)

    @classmethod
    def linear(cls, d: int) -> "RegionA":
        """``F(v) = 1 - mean(v) / 2``."""
        if d < 2:
            raise InvalidParams("region needs d >= 2")
        return cls(tuple([1.0 / (2 * (d - 1))] * (d - 1)), 1.0)

    @property
    def d(self) -> int:
        return len(self.slopes) + 1

    def F(self, v: np.ndarray) -> np.ndarray:
        return self.intercept - np.asarray(v, dtype=float) @ np.asarray(self.slopes)


@dataclass(frozen=True)
class MaximalPoint:
    """Indicator that x has no coordinatewise dominator inside the scaled region.

    The region ``lam^(1/d) A`` is translated so that its corner sits at
    ``anchor``; by default it sits at ``-lam^(1/d)/2`` in every coordinate,
    inside the centered cube of volume ``lam``.
    """

    region: RegionA
    lam: float
    anchor: Optional[tuple] = None

    def __post_init__(self):
        if not self.lam > 0:
            raise InvalidParams("lam must be positive")
        if self.anchor is not None:
            object.__setattr__(self, "anchor", tuple(float(a) for a in self.anchor))

    @property
    def scale(self) -> float:
        return self.lam ** (1.0 / self.region.d)

    @property
    def corner(self) -> np.ndarray:
        if self.anchor is None:
            return np.full(self.region.d, -self.scale / 2)
        return np.asarray(self.anchor)

    def in_region(self, pts) -> np.ndarray:
        q = (np.atleast_2d(np.asarray(pts, dtype=float)) - self.corner) / self.scale
        v, w = q[:, :-1], q[:, -1]
        return np.all((v >= 0) & (v <= 1), axis=1) & (w >= 0) & (w <= self.region.F(v))


@dataclass(frozen=True)
class BirthGrowth:
    """Johnson-Mehl acceptance: seed kept iff its downward cone is empty."""

    v: float

    def __post_init__(self):
        if not self.v > 0:
            raise InvalidParams("growth speed must be positive")


@dataclass(frozen=True)
class InsuranceClaim:
    """``min(cap, k-th nearest space-time distance)``; coordinate 0 is time."""

    k: int
    cap: float

    def __post_init__(self):
        if self.k < 1 or not self.cap > 0:
            raise InvalidParams("claim score needs k >= 1 and cap > 0")


@dataclass(frozen=True)
class Constant:
    """The score identically equal to ``value`` (radius 0)."""

    value: float = 1.0

    def __post_init__(self):
        if not self.value >= 0:
            raise InvalidParams("scores are nonnegative")


ScoreSpec = Union[Clique, KnnLength, VoronoiLength, MaximalPoint, BirthGrowth, InsuranceClaim, Constant]

TRANSLATION_INVARIANT = (Clique, KnnLength, VoronoiLength, Constant, BirthGrowth)


@dataclass(frozen=True)
class ScoreResult:
    value: float
    radius: float
    truncated_out: bool = False


# --------------------------------------------------------------------------
# neighborhoods


class _Points:
    """A point array with its window and a lazily built grid index."""

    def __init__(self, pts: np.ndarray, window: Window, marks: Optional[np.ndarray] = None, cell_side=None):
        self.pts = pts
        self.window = window
        self.marks = marks
        self.n = pts.shape[0]
        self._cell_side = cell_side
        self._index: Optional[NeighborIndex] = None

    @property
    def index(self) -> NeighborIndex:
        if self._index is None:
            cfg = PointConfiguration(self.pts, self.window)
            self._index = NeighborIndex(cfg, self._cell_side)
        return self._index

    def around(self, i: int, R: float) -> tuple[np.ndarray, np.ndarray]:
        """Ids (sorted) and displacement vectors of the other points within ``R`` of point ``i``."""
        x = self.pts[i]
        if not math.isfinite(R) or self.n < 32:
            ids = np.arange(self.n)
        else:
            ids = self.index.candidates(x, R)
        ids = ids[ids != i]
        rel = self.window.displacement(x, self.pts[ids])
        keep = np.einsum("ij,ij->i", rel, rel) <= R * R if math.isfinite(R) else np.ones(ids.size, bool)
        ids, rel = ids[keep], rel[keep]
        order = np.argsort(ids, kind="stable")
        return ids[order], rel[order]

    def typical_spacing(self) -> float:
        return (self.window.volume / max(self.n, 1)) ** (1.0 / self.window.d)


# --------------------------------------------------------------------------
# kernels: (spec, points, i) -> ScoreResult


def _count_cliques(adj: np.ndarray, size: int) -> int:
    """Number of cliques with ``size`` vertices in the graph with adjacency ``adj``."""
    m = adj.shape[0]
    if size == 0:
        return 1
    if size == 1:
        return m
    if size == 2:
        return int(np.count_nonzero(np.triu(adj, 1)))
    total = 0
    for v in range(m):
        later = np.flatnonzero(adj[v, v + 1 :]) + v + 1
        if later.size >= size - 1:
            total += _count_cliques(adj[np.ix_(later, later)], size - 1)
    return total


def _clique(spec: Clique, P: _Points, i: int) -> ScoreResult:
    ids, rel = P.around(i, spec.s)
    if spec.k == 1:
        count = ids.size
    else:
        diff = rel[:, None, :] - rel[None, :, :]
        adj = np.einsum("ijk,ijk->ij", diff, diff) <= spec.s**2
        np.fill_diagonal(adj, False)
        count = _count_cliques(adj, spec.k)
    return ScoreResult(count / (spec.k + 1), spec.s)


@lru_cache(maxsize=None)
def _cube_cone_grid(d: int) -> int:
    return int(math.floor(3 * math.sqrt(d - 1))) + 1


def cone_index(rel: np.ndarray) -> np.ndarray:
    """Assign displacement vectors to cones in which any two vectors make an angle < 60 degrees."""
    rel = np.atleast_2d(rel)
    d = rel.shape[1]
    if d == 1:
        return (rel[:, 0] < 0).astype(np.int64)
    if d == 2:
        ang = np.arctan2(rel[:, 1], rel[:, 0])
        return np.mod(np.floor(ang / (np.pi / 4)).astype(np.int64), 8)
    # central projection onto the faces of [-1, 1]^d, each face cut into m^(d-1) cells
    m = _cube_cone_grid(d)
    a = np.abs(rel)
    axis = np.argmax(a, axis=1)
    top = a[np.arange(rel.shape[0]), axis]
    top = np.where(top == 0, 1.0, top)
    sign = (rel[np.arange(rel.shape[0]), axis] < 0).astype(np.int64)
    proj = rel / top[:, None]
    cells = np.clip(np.floor((proj + 1) / 2 * m).astype(np.int64), 0, m - 1)
    code = axis * 2 + sign
    for j in range(d):
        code = code * m + cells[:, j]
    return code


def _num_cones(d: int) -> int:
    if d == 1:
        return 2
    if d == 2:
        return 8
    m = _cube_cone_grid(d)
    return 2 * d * m ** (d - 1)


def _cone_radius(rel: np.ndarray, dist: np.ndarray, k: int) -> float:
    """Max over cones of the k-th smallest distance in the cone (inf if a cone has < k points)."""
    d = rel.shape[1]
    cones = cone_index(rel) if rel.shape[0] else np.empty(0, np.int64)
    uniq, counts = np.unique(cones, return_counts=True)
    if uniq.size < _num_cones(d) or np.any(counts < k):
        return INF
    worst = 0.0
    for c in uniq:
        dc = np.sort(dist[cones == c])
        worst = max(worst, float(dc[k - 1]))
    return worst


def _knn(spec: KnnLength, P: _Points, i: int) -> ScoreResult:
    k = spec.k
    others = P.n - 1
    if others <= 0:
        return ScoreResult(0.0, INF)
    R = 2.0 * P.typical_spacing() * k ** (1.0 / P.window.d)
    while True:
        ids, rel = P.around(i, R)
        full = ids.size == others
        dist = np.sqrt(np.einsum("ij,ij->i", rel, rel))
        rho = _cone_radius(rel, dist, k)
        if rho <= R / 2 or full:
            break
        R *= 2
    if math.isfinite(rho):
        keep = dist <= R
    else:
        keep = np.ones(ids.size, bool)
    ids, rel, dist = ids[keep], rel[keep], dist[keep]
    # k nearest of x, ties by identifier
    order = np.lexsort((ids, dist))
    nearest = set(order[:k].tolist())
    edges = set(nearest)
    cand = np.flatnonzero(dist <= rho) if math.isfinite(rho) else np.arange(ids.size)
    for j in cand:
        if j in edges:
            continue
        dyz = np.sqrt(np.einsum("ij,ij->i", rel - rel[j], rel - rel[j]))
        closer = (dyz < dist[j]) | ((dyz == dist[j]) & (ids < i))
        closer[j] = False
        if np.count_nonzero(closer) < k:
            edges.add(int(j))
    value = 0.5 * math.fsum(float(dist[j]) for j in sorted(edges))
    return ScoreResult(value, 2 * rho)


def _periodic_images(P: _Points, i: int, R: float) -> np.ndarray:
    """Displacements to every lattice image (other than x itself) within ``R``."""
    x = P.pts[i]
    base = P.window.displacement(x, P.pts)
    shifts = lattice_shifts(P.window, R)
    rel = (base[:, None, :] + shifts[None, :, :]).reshape(-1, P.window.d)
    r2 = np.einsum("ij,ij->i", rel, rel)
    keep = (r2 <= R * R) & (r2 > 0)
    return rel[keep]


def _voronoi(spec: VoronoiLength, P: _Points, i: int) -> ScoreResult:
    if P.window.d != 2:
        raise InvalidParams("Voronoi length is defined for d = 2 only")
    if P.n <= 1 and not P.window.periodic:
        return ScoreResult(0.0, 0.0)
    cap = 8 * P.window.diameter
    R = 4.0 * P.typical_spacing()
    while True:
        final = R >= cap
        if P.window.periodic:
            nbrs = _periodic_images(P, i, R)
        else:
            _, nbrs = P.around(i, INF if final else R)
        box = 1e9 * (R + 1.0) if final else 4.0 * R
        value, bounded, reach = half_finite_perimeter(nbrs, box)
        if bounded and reach <= R / 2:
            return ScoreResult(value, R)
        if final:
            return ScoreResult(value, R)
        R = min(2 * R, cap)


def _maximal_reach(spec: MaximalPoint, x: np.ndarray) -> float:
    """Largest distance from x to the part of the region in x's upper orthant."""
    L = spec.scale
    q = x - spec.corner
    d = q.shape[0]
    slopes = np.asarray(spec.region.slopes)
    # constraints A z <= b over z = (v, w)
    A, b = [], []
    for j in range(d - 1):
        e = np.zeros(d)
        e[j] = -1.0
        A.append(e.copy()); b.append(-q[j])
        e[j] = 1.0
        A.append(e); b.append(L)
    e = np.zeros(d); e[-1] = -1.0
    A.append(e); b.append(-q[-1])
    e = np.concatenate([slopes, [1.0]])
    A.append(e); b.append(L * spec.region.intercept)
    A, b = np.asarray(A), np.asarray(b)
    best = 0.0
    tol = 1e-9 * max(L, 1.0)
    for rows in combinations(range(len(b)), d):
        M = A[list(rows)]
        if abs(np.linalg.det(M)) < 1e-14:
            continue
        z = np.linalg.solve(M, b[list(rows)])
        if np.all(A @ z <= b + tol):
            best = max(best, float(np.linalg.norm(z - q)))
    return best


def _maximal(spec: MaximalPoint, P: _Points, i: int) -> ScoreResult:
    x = P.pts[i]
    if x.shape[0] != spec.region.d:
        raise InvalidParams("region dimension differs from the configuration's")
    if not spec.in_region(x)[0]:
        raise DomainError(f"point {x} lies outside the scaled region")
    others = np.delete(P.pts, i, axis=0)
    if others.shape[0]:
        dom = np.all(others >= x, axis=1)
        dom &= spec.in_region(others) if dom.any() else dom
        if dom.any():
            dmin = float(np.min(np.linalg.norm(others[dom] - x, axis=1)))
            return ScoreResult(0.0, dmin)
    return ScoreResult(1.0, _maximal_reach(spec, x))


def _birth_growth(spec: BirthGrowth, P: _Points, i: int) -> ScoreResult:
    if P.marks is None:
        raise MissingMarks("birth-growth scores need birth-time marks")
    t = float(P.marks[i])
    reach = spec.v * t
    ids, rel = P.around(i, reach)
    if ids.size:
        dist = np.sqrt(np.einsum("ij,ij->i", rel, rel))
        blocked = P.marks[ids] <= t - dist / spec.v
        if blocked.any():
            return ScoreResult(0.0, float(dist[blocked].min()))
    return ScoreResult(1.0, reach)


def _insurance(spec: InsuranceClaim, P: _Points, i: int) -> ScoreResult:
    k = spec.k
    if P.n - 1 < k:
        return ScoreResult(0.0, INF)
    R = 2.0 * P.typical_spacing() * k ** (1.0 / P.window.d)
    while True:
        ids, rel = P.around(i, R)
        if ids.size >= k:
            dist = np.sort(np.sqrt(np.einsum("ij,ij->i", rel, rel)))
            dk = float(dist[k - 1])
            break
        R *= 2
    capped = min(float(spec.cap), dk)
    return ScoreResult(capped, capped)


def _constant(spec: Constant, P: _Points, i: int) -> ScoreResult:
    return ScoreResult(float(spec.value), 0.0)


_KERNELS = {
    Clique: _clique,
    KnnLength: _knn,
    VoronoiLength: _voronoi,
    MaximalPoint: _maximal,
    BirthGrowth: _birth_growth,
    InsuranceClaim: _insurance,
    Constant: _constant,
}


def _kernel(spec):
    try:
        return _KERNELS[type(spec)]
    except KeyError:
        raise InvalidParams(f"unknown score spec {spec!r}") from None


def _check(spec, window: Window, marked: bool) -> None:
    if isinstance(spec, VoronoiLength) and window.d != 2:
        raise InvalidParams("Voronoi length is defined for d = 2 only")
    if isinstance(spec, BirthGrowth) and not marked:
        raise MissingMarks("birth-growth scores need birth-time marks")
    if isinstance(spec, MaximalPoint) and spec.region.d != window.d:
        raise InvalidParams("region dimension differs from the configuration's")


def _with_x(config: PointConfiguration, x, mark=None) -> tuple[_Points, int]:
    x = as_point(x, config.d)
    pts = np.vstack([config.points, x])
    marks = None
    if config.marks is not None:
        if mark is None:
            raise MissingMarks("marked configuration needs the mark of x")
        marks = np.append(config.marks, float(mark))
    elif mark is not None:
        marks = np.append(np.zeros(len(config)), float(mark))
    return _Points(pts, config.window, marks), len(config)


def score(spec: ScoreSpec, x, config: PointConfiguration, mark: Optional[float] = None) -> ScoreResult:
    """``xi(x, config)`` for ``x`` not in ``config``."""
    marked = config.marks is not None or mark is not None
    _check(spec, config.window, marked)
    P, i = _with_x(config, x, mark)
    return _kernel(spec)(spec, P, i)


# --------------------------------------------------------------------------
# named per-point operations


def clique_score(k: int, s: float, x, config: PointConfiguration) -> ScoreResult:
    return score(Clique(k, s), x, config)


def knn_length_score(k: int, x, config: PointConfiguration) -> ScoreResult:
    return score(KnnLength(k), x, config)


def voronoi_length_score(x, config: PointConfiguration) -> ScoreResult:
    return score(VoronoiLength(), x, config)


def maximal_indicator(x, config: PointConfiguration, region: RegionA, lam: float, anchor=None) -> ScoreResult:
    return score(MaximalPoint(region, lam, anchor), x, config)


def birth_growth_accept(seed_point, marked_config: PointConfiguration, v: float) -> ScoreResult:
    """``seed_point`` is ``(position, birth_time)``."""
    if marked_config.marks is None:
        raise MissingMarks("birth-growth scores need birth-time marks")
    pos, t = seed_point
    if t < 0:
        raise InvalidParams("birth times are nonnegative")
    return score(BirthGrowth(v), pos, marked_config, mark=t)


def insurance_claim(point, config: PointConfiguration, k: int, cap: float) -> ScoreResult:
    """``point`` is the space-time location ``(t, s_1, ..., s_d)``."""
    p = as_point(point, config.d)
    if not config.window.contains(p)[0]:
        raise DomainError("claim lies outside the space-time window")
    return score(InsuranceClaim(k, cap), p, config)


# --------------------------------------------------------------------------
# sums


def score_all(spec: ScoreSpec, config: PointConfiguration) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Values and radii at every point (each scored against the others).

    The third array flags the points that take part in the sum (all of them,
    except points outside the region for :class:`MaximalPoint`).
    """
    _check(spec, config.window, config.marks is not None)
    n = len(config)
    values = np.zeros(n)
    radii = np.zeros(n)
    used = np.ones(n, dtype=bool)
    if n == 0:
        return values, radii, used
    if isinstance(spec, Constant):
        return np.full(n, float(spec.value)), radii, used
    cell = spec.s if isinstance(spec, Clique) else None
    P = _Points(config.points, config.window, config.marks, cell_side=cell)
    kern = _kernel(spec)
    if isinstance(spec, MaximalPoint):
        used = spec.in_region(config.points)
    for i in range(n):
        if not used[i]:
            continue
        res = kern(spec, P, i)
        values[i] = res.value
        radii[i] = res.radius
    return values, radii, used


def total_score(spec: ScoreSpec, config: PointConfiguration, window: Optional[Window] = None) -> float:
    """Sum of the scores of the points of ``config`` lying in ``window``.

    Summation is exact (``math.fsum``), hence independent of point order.
    """
    values, _, used = score_all(spec, config)
    if window is not None and len(config):
        used = used & window.contains(config.points)
    return math.fsum(values[used])


def truncated_total(spec: ScoreSpec, sample, rho: float, values: Optional[np.ndarray] = None) -> float:
    """Sum of scores over points whose ancestor-clan diameter is at most ``rho``."""
    diam = getattr(sample, "clan_diameter", None)
    if diam is None or len(diam) != len(sample.config):
        raise MissingClanData("sample carries no per-point clan diameters")
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    if values is None:
        values, _, used = score_all(spec, sample.config)
        values = np.where(used, values, 0.0)
    return math.fsum(values[np.asarray(diam) <= rho])
