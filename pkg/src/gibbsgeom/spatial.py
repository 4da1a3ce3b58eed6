"""Windows, point configurations, distances and a grid neighbor index."""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product
from typing import Optional, Sequence

import numpy as np

FREE = "free"
PERIODIC = "periodic"


def as_point(x, d: Optional[int] = None) -> np.ndarray:
    p = np.atleast_1d(np.asarray(x, dtype=float))
    if p.ndim != 1:
        raise ValueError(f"a point must be a flat coordinate vector, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError(f"point has non-finite coordinates: {p}")
    if d is not None and p.shape[0] != d:
        raise ValueError(f"expected a {d}-dimensional point, got {p.shape[0]}")
    return p


def ball_volume(d: int, r: float) -> float:
    """Volume of the closed Euclidean ball of radius ``r`` in ``R^d``."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    if r < 0:
        raise ValueError("radius must be nonnegative")
    return math.pi ** (d / 2) / math.gamma(1 + d / 2) * r**d


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere in ``R^d`` (2 for d = 1)."""
    return d * ball_volume(d, 1.0)


def gamma_cube(lam: float, y, d: Optional[int] = None) -> float:
    """Volume of ``Q_lam`` minus its overlap with ``Q_lam - y``.

    ``Q_lam`` is the centered cube of volume ``lam``.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    y = as_point(y, d)
    side = lam ** (1.0 / y.shape[0])
    overlap = float(np.prod(np.maximum(side - np.abs(y), 0.0)))
    return max(lam - overlap, 0.0)


@dataclass(frozen=True)
class Window:
    """Axis-aligned box given by its center and side lengths.

    In periodic mode the fundamental domain is ``[lo, hi)`` and distances are
    taken over lattice translates.
    """

    center: np.ndarray
    side: np.ndarray
    boundary_mode: str = FREE

    def __post_init__(self):
        c = as_point(self.center)
        s = np.broadcast_to(np.asarray(self.side, dtype=float), c.shape).copy()
        if not np.all(np.isfinite(s)) or np.any(s <= 0):
            raise ValueError(f"window sides must be positive, got {s}")
        if self.boundary_mode not in (FREE, PERIODIC):
            raise ValueError(f"unknown boundary mode {self.boundary_mode!r}")
        c.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "side", s)

    @classmethod
    def cube(cls, lam: float, d: int, boundary_mode: str = FREE, center=None) -> "Window":
        """The cube of volume ``lam`` (side ``lam**(1/d)``), centered at the origin by default."""
        if lam <= 0:
            raise ValueError("lam must be positive")
        c = np.zeros(d) if center is None else as_point(center, d)
        return cls(c, np.full(d, lam ** (1.0 / d)), boundary_mode)

    @property
    def d(self) -> int:
        return self.center.shape[0]

    @property
    def lo(self) -> np.ndarray:
        return self.center - self.side / 2

    @property
    def hi(self) -> np.ndarray:
        return self.center + self.side / 2

    @property
    def volume(self) -> float:
        return float(np.prod(self.side))

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.side))

    @property
    def periodic(self) -> bool:
        return self.boundary_mode == PERIODIC

    def contains(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.periodic:
            return np.all((pts >= self.lo) & (pts < self.hi), axis=1)
        return np.all((pts >= self.lo) & (pts <= self.hi), axis=1)

    def wrap(self, pts) -> np.ndarray:
        """Map points into the fundamental domain (identity in free mode)."""
        pts = np.asarray(pts, dtype=float)
        if not self.periodic:
            return pts
        w = self.lo + np.mod(pts - self.lo, self.side)
        # mod can round up to exactly `side`
        return np.where(w >= self.hi, self.lo, w)

    def displacement(self, x, pts) -> np.ndarray:
        """Vectors ``y - x`` (minimum image in periodic mode)."""
        delta = np.asarray(pts, dtype=float) - np.asarray(x, dtype=float)
        if self.periodic:
            delta = delta - self.side * np.round(delta / self.side)
        return delta

    def distance(self, x, pts) -> np.ndarray:
        return np.linalg.norm(np.atleast_2d(self.displacement(x, pts)), axis=-1)

    def translated(self, shift) -> "Window":
        return Window(self.center + as_point(shift, self.d), self.side, self.boundary_mode)


@dataclass(frozen=True)
class PointConfiguration:
    """A finite point set in a window, optionally marked with nonnegative times."""

    points: np.ndarray
    window: Window
    marks: Optional[np.ndarray] = None

    def __post_init__(self):
        d = self.window.d
        pts = np.asarray(self.points, dtype=float).reshape(-1, d).copy()
        if not np.all(np.isfinite(pts)):
            raise ValueError("configuration contains non-finite coordinates")
        if pts.shape[0] and not np.all(self.window.contains(pts)):
            raise ValueError("configuration has points outside its window")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.marks is not None:
            m = np.asarray(self.marks, dtype=float).reshape(-1).copy()
            if m.shape[0] != pts.shape[0]:
                raise ValueError("marks and points differ in length")
            if np.any(m < 0) or not np.all(np.isfinite(m)):
                raise ValueError("marks must be finite and nonnegative")
            m.setflags(write=False)
            object.__setattr__(self, "marks", m)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.window.d

    @property
    def marked(self) -> bool:
        return self.marks is not None

    def with_point(self, x, mark: Optional[float] = None) -> "PointConfiguration":
        x = as_point(x, self.d)
        marks = None
        if self.marks is not None:
            if mark is None:
                raise ValueError("marked configuration needs a mark for the new point")
            marks = np.append(self.marks, mark)
        return PointConfiguration(np.vstack([self.points, x]), self.window, marks)

    def without(self, i: int) -> "PointConfiguration":
        keep = np.arange(len(self)) != i
        marks = None if self.marks is None else self.marks[keep]
        return PointConfiguration(self.points[keep], self.window, marks)

    def translated(self, shift) -> "PointConfiguration":
        shift = as_point(shift, self.d)
        return PointConfiguration(self.points + shift, self.window.translated(shift), self.marks)


def empty_configuration(window: Window, marked: bool = False) -> PointConfiguration:
    return PointConfiguration(np.empty((0, window.d)), window, np.empty(0) if marked else None)


def _default_cell_side(window: Window, n: int) -> float:
    return (window.volume / max(n, 1)) ** (1.0 / window.d)


class NeighborIndex:
    """Uniform grid hash over a configuration for radius queries.

    Cells are anchored at the window's lower corner. In periodic mode the
    grid tiles the window exactly and cell coordinates wrap.
    """

    def __init__(self, config: PointConfiguration, cell_side: Optional[float] = None):
        self.config = config
        win = config.window
        h = float(cell_side) if cell_side else _default_cell_side(win, len(config))
        if h <= 0:
            raise ValueError("cell side must be positive")
        if win.periodic:
            self.ncells = np.maximum(np.floor(win.side / h), 1).astype(np.int64)
            self.cell = win.side / self.ncells
        else:
            self.ncells = None
            self.cell = np.full(win.d, h)
        self.buckets: dict[tuple, list[int]] = {}
        if len(config):
            keys = self._keys(config.points)
            for i, key in enumerate(map(tuple, keys)):
                self.buckets.setdefault(key, []).append(i)
        self._arrays = {k: np.asarray(v, dtype=np.int64) for k, v in self.buckets.items()}

    def _keys(self, pts: np.ndarray) -> np.ndarray:
        keys = np.floor((pts - self.config.window.lo) / self.cell).astype(np.int64)
        if self.ncells is not None:
            keys = np.mod(keys, self.ncells)
        return keys

    def candidates(self, x: np.ndarray, r: float) -> np.ndarray:
        """Ids in every cell meeting the box ``x +- r`` (a superset of the ball)."""
        if not self._arrays:
            return np.empty(0, dtype=np.int64)
        win = self.config.window
        if self.ncells is not None and np.any(2 * r + 2 * self.cell >= win.side):
            return np.arange(len(self.config), dtype=np.int64)
        lo = np.floor((x - r - win.lo) / self.cell).astype(np.int64)
        hi = np.floor((x + r - win.lo) / self.cell).astype(np.int64)
        ncand = int(np.prod(hi - lo + 1))
        if ncand > 4 * len(self._arrays):
            # query box larger than the occupied grid: cheaper to filter everything
            return np.arange(len(self.config), dtype=np.int64)
        found = []
        for key in product(*(range(a, b + 1) for a, b in zip(lo, hi))):
            if self.ncells is not None:
                key = tuple(int(k) for k in np.mod(key, self.ncells))
            arr = self._arrays.get(tuple(key))
            if arr is not None:
                found.append(arr)
        if not found:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(found)

    def within(self, x, r: float, exclude: Optional[int] = None, exclude_coincident: bool = False) -> np.ndarray:
        """Sorted ids ``y`` with ``dist(x, y) <= r``."""
        x = as_point(x, self.config.d)
        cand = self.candidates(x, r)
        if cand.size == 0:
            return cand
        dist = self.config.window.distance(x, self.config.points[cand])
        keep = dist <= r
        if exclude is not None:
            keep &= cand != exclude
        if exclude_coincident:
            keep &= ~np.all(self.config.points[cand] == x, axis=1)
        return np.sort(cand[keep])


def neighbors_within(
    index: NeighborIndex,
    config: PointConfiguration,
    x,
    r: float,
    exclude: Optional[int] = None,
) -> list[int]:
    """Identifiers of the points of ``config`` within distance ``r`` of ``x``.

    Points sitting exactly at ``x`` are left out unless ``exclude`` names the
    single id to drop instead.
    """
    if r < 0:
        raise ValueError("radius must be nonnegative")
    if index.config is not config:
        raise ValueError("index was built over a different configuration")
    if exclude is None:
        ids = index.within(x, r, exclude_coincident=True)
    else:
        ids = index.within(x, r, exclude=exclude)
    return [int(i) for i in ids]


def kth_nearest_distance(config: PointConfiguration, x, k: int) -> float:
    """Distance from ``x`` to its ``k``-th nearest other point of ``config``.

    One copy of ``x`` itself is discarded if it belongs to ``config``.
    Returns 0 when fewer than ``k`` other points exist.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    x = as_point(x, config.d)
    dist = config.window.distance(x, config.points) if len(config) else np.empty(0)
    same = np.flatnonzero(np.all(config.points == x, axis=1)) if len(config) else []
    if len(same):
        dist = np.delete(dist, same[0])
    if dist.size < k:
        return 0.0
    return float(np.partition(dist, k - 1)[k - 1])


def lattice_shifts(window: Window, reach: float) -> np.ndarray:
    """Lattice translation vectors of a periodic window with norm <= reach + diameter."""
    if not window.periodic:
        return np.zeros((1, window.d))
    kmax = np.ceil(reach / window.side).astype(int) + 1
    grids = [np.arange(-k, k + 1) for k in kmax]
    ks = np.array(list(product(*grids)), dtype=float)
    shifts = ks * window.side
    keep = np.linalg.norm(shifts, axis=1) <= reach + window.diameter
    return shifts[keep]


def diameter(pts: np.ndarray) -> float:
    """Largest pairwise Euclidean distance of a point set (0 for < 2 points)."""
    pts = np.asarray(pts, dtype=float)
    if pts.shape[0] < 2:
        return 0.0
    if pts.shape[0] > 64 and pts.shape[1] >= 2:
        from scipy.spatial import ConvexHull, QhullError

        try:
            pts = pts[ConvexHull(pts).vertices]
        except QhullError:
            pass
    from scipy.spatial.distance import pdist

    return float(pdist(pts).max())


def coincident_free(pts: Sequence) -> bool:
    arr = np.asarray(pts, dtype=float)
    return np.unique(arr, axis=0).shape[0] == arr.shape[0]
