"""Exact sampling of admissible Gibbs processes by dependent thinning.

The free birth-death process is realised lazily on an unbounded grid of
space cells. Each cell owns independent random streams for

* the points alive at time 0 (Poisson(tau * vol) of them, exponential ages),
* and, per unit-length time chunk going backwards, the points that died in
  that chunk (Poisson(tau * vol * h) of them, exponential lifetimes).

A point alive at time ``t < 0`` must have died after ``t``, so generating a
cell's chunks down to ``t`` reveals all of its points alive at ``t``. The
thinning status of an event depends only on its ancestors (events alive at
its birth instant within the interaction range), which are strictly older,
so statuses are resolved by a post-order walk over the ancestor graph.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product
from typing import Optional

import numpy as np

from .errors import ClanOverflow, InvalidParams
from .potentials import Potential, admissibility_margin, boltzmann
from .rng import derive_seed, generator, zigzag
from .spatial import PointConfiguration, Window, as_point, diameter

TIME_CHUNK = 1.0
MARK_LAWS = (None, "uniform", "exponential")


def event_cell_side(tau: float, d: int) -> float:
    """Grid cell side for the event field: about 8 expected alive points per cell."""
    return (8.0 / tau) ** (1.0 / d)


@dataclass(frozen=True)
class SamplerOptions:
    max_padding: Optional[float] = None
    max_clan_points: int = 100_000
    near_critical: bool = False
    marks: Optional[str] = None
    mark_scale: float = 1.0

    def __post_init__(self):
        if self.marks not in MARK_LAWS:
            raise InvalidParams(f"unknown mark law {self.marks!r}")
        if self.max_clan_points < 1:
            raise InvalidParams("max_clan_points must be positive")
        if not self.mark_scale > 0:
            raise InvalidParams("mark_scale must be positive")


@dataclass(frozen=True)
class GibbsSample:
    """Accepted points alive at time 0 inside the window, with clan bookkeeping.

    ``free`` is the dominating free process in the same window; ``accepted``
    indexes the rows of ``free`` that survived the thinning, in order.
    """

    config: PointConfiguration
    clan_diameter: np.ndarray
    free: PointConfiguration
    accepted: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.config)


class _Cell:
    __slots__ = ("key", "ids", "depth")

    def __init__(self, key):
        self.key = key
        self.ids = np.empty(0, dtype=np.int64)
        self.depth = -1  # -1: nothing generated; 0: alive-at-0 layer; j: plus j death chunks


class EventField:
    """Lazily generated space-time events of the free birth-death process."""

    def __init__(self, tau: float, window: Window, seed: int, marks: Optional[str] = None, mark_scale: float = 1.0):
        if not tau > 0:
            raise InvalidParams("tau must be positive")
        self.tau = float(tau)
        self.window = window
        self.d = window.d
        self.seed = int(seed)
        self.marks = marks
        self.mark_scale = mark_scale
        self.origin = window.lo
        h = event_cell_side(tau, self.d)
        if window.periodic:
            self.ncells = np.maximum(np.floor(window.side / h), 1).astype(np.int64)
            self.cell = window.side / self.ncells
        else:
            self.ncells = None
            self.cell = np.full(self.d, h)
        self.cell_volume = float(np.prod(self.cell))
        self._cells: dict[tuple, _Cell] = {}
        cap = 256
        self.pos = np.empty((cap, self.d))
        self.birth = np.empty(cap)
        self.death = np.empty(cap)
        self.umark = np.empty(cap)
        self.mark = np.empty(cap)
        self.n = 0

    # storage -----------------------------------------------------------
    def _append(self, pos, birth, death, umark, mark) -> np.ndarray:
        m = pos.shape[0]
        need = self.n + m
        if need > self.pos.shape[0]:
            cap = max(need, 2 * self.pos.shape[0])
            for name in ("pos", "birth", "death", "umark", "mark"):
                old = getattr(self, name)
                new = np.empty((cap,) + old.shape[1:])
                new[: self.n] = old[: self.n]
                setattr(self, name, new)
        sl = slice(self.n, need)
        self.pos[sl] = pos
        self.birth[sl] = birth
        self.death[sl] = death
        self.umark[sl] = umark
        self.mark[sl] = mark
        ids = np.arange(self.n, need, dtype=np.int64)
        self.n = need
        return ids

    def _block(self, key: tuple, chunk: int) -> np.ndarray:
        rng = generator(self.seed, self.d, *(zigzag(k) for k in key), chunk + 1)
        if chunk < 0:
            n = rng.poisson(self.tau * self.cell_volume)
        else:
            n = rng.poisson(self.tau * self.cell_volume * TIME_CHUNK)
        u = rng.random((n, self.d))
        t1 = rng.random(n) if chunk >= 0 else rng.exponential(size=n)
        life = rng.exponential(size=n)
        umark = 1.0 - rng.random(n)  # in (0, 1] so that acceptance with probability 0 is impossible
        mraw = rng.random(n)
        pos = self.origin + (np.asarray(key, dtype=float) + u) * self.cell
        if self.ncells is not None:
            pos = self.window.wrap(pos)
        if chunk < 0:
            birth = -t1
            death = life
        else:
            death = -(chunk + t1) * TIME_CHUNK
            birth = death - life
        if self.marks == "uniform":
            mark = mraw * self.mark_scale
        elif self.marks == "exponential":
            mark = -np.log1p(-mraw) * self.mark_scale
        else:
            mark = np.zeros(n)
        return self._append(pos, birth, death, umark, mark)

    def _cell(self, key: tuple, depth: int) -> _Cell:
        cell = self._cells.get(key)
        if cell is None:
            cell = self._cells[key] = _Cell(key)
        if cell.depth < depth:
            blocks = [cell.ids]
            for chunk in range(cell.depth, depth):
                blocks.append(self._block(key, chunk))
            cell.ids = np.concatenate(blocks)
            cell.depth = depth
        return cell

    # queries -------------------------------------------------------------
    def cell_keys(self, lo: np.ndarray, hi: np.ndarray):
        a = np.floor((lo - self.origin) / self.cell).astype(np.int64)
        b = np.floor((hi - self.origin) / self.cell).astype(np.int64)
        if self.ncells is not None:
            span = b - a + 1
            ranges = [
                range(n) if s >= n else sorted({int(k) % n for k in range(lo_, hi_ + 1)})
                for lo_, hi_, s, n in zip(a, b, span, self.ncells)
            ]
            return product(*ranges)
        return product(*(range(int(x), int(y) + 1) for x, y in zip(a, b)))

    def alive_at_zero(self) -> np.ndarray:
        """Ids of events alive at time 0 inside the window, oldest birth first."""
        win = self.window
        found = [self._cell(key, 0).ids for key in self.cell_keys(win.lo, win.hi)]
        ids = np.concatenate(found) if found else np.empty(0, dtype=np.int64)
        ids = ids[self.death[ids] > 0]
        ids = ids[win.contains(self.pos[ids])] if ids.size else ids
        return _order(ids, self.birth, self.pos)

    def alive_near(self, x: np.ndarray, t: float, r: float) -> np.ndarray:
        """Ids of events alive at time ``t < 0`` within distance ``r`` of ``x``."""
        depth = 1 + int(math.ceil(-t / TIME_CHUNK))
        found = [self._cell(key, depth).ids for key in self.cell_keys(x - r, x + r)]
        ids = np.concatenate(found) if len(found) > 1 else found[0]
        ids = ids[(self.birth[ids] < t) & (self.death[ids] > t)]
        if ids.size:
            ids = ids[self.window.distance(x, self.pos[ids]) <= r]
        return ids


def _order(ids: np.ndarray, birth: np.ndarray, pos: np.ndarray) -> np.ndarray:
    """Sort by birth time, ties by position lexicographically."""
    if ids.size < 2:
        return ids
    keys = [pos[ids, j] for j in range(pos.shape[1] - 1, -1, -1)] + [birth[ids]]
    return ids[np.lexsort(keys)]


class _Thinning:
    def __init__(self, field: EventField, psi: Potential, beta: float, max_clan: int, max_padding: float):
        self.f = field
        self.psi = psi
        self.beta = float(beta)
        self.r = psi.range
        self.max_clan = max_clan
        self.max_padding = max_padding
        self.status: dict[int, bool] = {}
        self.anc: dict[int, np.ndarray] = {}
        self.extent = 0.0

    def ancestors(self, e: int) -> np.ndarray:
        f = self.f
        x = f.pos[e]
        if not f.window.periodic:
            over = max(float(np.max(f.window.lo - (x - self.r))), float(np.max((x + self.r) - f.window.hi)), 0.0)
            if over > self.extent:
                self.extent = over
                if over > self.max_padding:
                    raise ClanOverflow(
                        f"ancestor search reached {over:.3g} beyond the window (max_padding={self.max_padding:.3g})"
                    )
        ids = f.alive_near(x, f.birth[e], self.r)
        return ids[ids != e]

    def resolve(self, e: int) -> int:
        """Resolve the status of ``e``; returns the number of new ancestor lists built."""
        status, anc = self.status, self.anc
        built = 0
        stack = [e]
        while stack:
            v = stack[-1]
            if v in status:
                stack.pop()
                continue
            a = anc.get(v)
            if a is None:
                a = anc[v] = self.ancestors(v)
                built += 1
                if built > self.max_clan:
                    raise ClanOverflow(f"ancestor clan exceeded {self.max_clan} events")
            pending = [int(w) for w in a if int(w) not in status]
            if pending:
                stack.extend(pending)
                continue
            acc = [int(w) for w in a if status[int(w)]]
            if acc:
                rel = self.f.window.displacement(self.f.pos[v], self.f.pos[acc])
                energy = self.psi.energy(rel)
            else:
                energy = self.psi.energy(np.empty((0, self.f.d)))
            status[v] = bool(self.f.umark[v] <= boltzmann(self.beta, energy))
            stack.pop()
        return built

    def clan(self, e: int) -> list[int]:
        seen = {e}
        todo = [e]
        while todo:
            v = todo.pop()
            for w in self.anc.get(v, ()):
                w = int(w)
                if w not in seen:
                    seen.add(w)
                    todo.append(w)
        seen.discard(e)
        return sorted(seen)


def default_max_padding(psi: Potential, window: Window) -> float:
    return 64.0 * psi.range + 10.0 * math.log(max(window.volume, 1.0))


def _doubling_padding(extent: float, r: float) -> float:
    pad = r
    while pad < extent:
        pad *= 2
    return pad


def sample_poisson(tau: float, window: Window, seed: int, marks: Optional[str] = None, mark_scale: float = 1.0) -> PointConfiguration:
    """Homogeneous Poisson(tau) points in ``window``.

    This is exactly the time-0 state of the free process that
    :func:`sample_gibbs` thins for the same seed, which couples the two.
    """
    f = EventField(tau, window, seed, marks, mark_scale)
    ids = f.alive_at_zero()
    return PointConfiguration(f.pos[ids], window, f.mark[ids] if marks else None)


def sample_gibbs(
    psi: Potential,
    tau: float,
    beta: float,
    window: Window,
    seed: int,
    options: Optional[SamplerOptions] = None,
) -> GibbsSample:
    """Exact sample of the Gibbs process with potential ``psi`` restricted to ``window``."""
    opts = options or SamplerOptions()
    if not beta >= 0:
        raise InvalidParams("beta must be nonnegative")
    margin = admissibility_margin(psi, tau, beta, window.d)
    # beta = 0 needs no clans at all, so the construction terminates for any tau
    if margin >= 1 and beta > 0 and not opts.near_critical:
        raise InvalidParams(f"(tau, beta) not admissible: margin {margin:.6g} >= 1")
    if window.periodic and np.any(window.side <= 2 * psi.range):
        raise InvalidParams("periodic window must be wider than twice the interaction range")
    f = EventField(tau, window, seed, opts.marks, opts.mark_scale)
    cand = f.alive_at_zero()
    max_padding = opts.max_padding if opts.max_padding is not None else default_max_padding(psi, window)
    th = _Thinning(f, psi, beta, opts.max_clan_points, max_padding)
    accepted = []
    diam = []
    max_clan = 0
    for j, e in enumerate(cand):
        e = int(e)
        if beta == 0:
            # acceptance probability is 1 whatever the ancestors do
            accepted.append(j)
            diam.append(0.0)
            continue
        th.resolve(e)
        if th.status[e]:
            clan = th.clan(e)
            if len(clan) > opts.max_clan_points:
                raise ClanOverflow(f"ancestor clan of {len(clan)} events exceeds {opts.max_clan_points}")
            max_clan = max(max_clan, len(clan))
            accepted.append(j)
            diam.append(diameter(np.vstack([f.pos[e], f.pos[clan]])) if clan else 0.0)
    accepted = np.asarray(accepted, dtype=np.int64)
    free_marks = f.mark[cand] if opts.marks else None
    free = PointConfiguration(f.pos[cand], window, free_marks)
    acc_ids = cand[accepted]
    config = PointConfiguration(f.pos[acc_ids], window, f.mark[acc_ids] if opts.marks else None)
    diagnostics = {
        "margin": margin,
        "padding": 0.0 if window.periodic else _doubling_padding(th.extent, psi.range),
        "max_clan_size": max_clan,
        "events": int(f.n),
        "candidates": int(cand.size),
    }
    return GibbsSample(config, np.asarray(diam, dtype=float), free, accepted, diagnostics)


# --------------------------------------------------------------------------
# Finite-window Metropolis sampler


def sample_conditional(
    psi: Potential,
    tau: float,
    beta: float,
    inner: Window,
    boundary: PointConfiguration,
    n_sweeps: int,
    moves_per_sweep: int,
    seed: int,
    initial: Optional[np.ndarray] = None,
) -> PointConfiguration:
    """Birth-death Metropolis draw inside ``inner`` given fixed outside points.

    The target has density proportional to ``tau^n exp(-beta H)`` against the
    unit-rate Poisson law on ``inner``, where ``H`` includes interactions with
    ``boundary``.
    """
    if inner.periodic:
        raise InvalidParams("the conditional sampler works on free inner windows")
    if n_sweeps < 1 or moves_per_sweep < 1:
        raise InvalidParams("chain parameters must be positive")
    if not tau > 0 or not beta >= 0:
        raise InvalidParams("tau must be positive and beta nonnegative")
    if boundary.d != inner.d:
        raise InvalidParams("boundary and inner window differ in dimension")
    bpts = boundary.points
    if bpts.shape[0]:
        strictly_inside = np.all((bpts > inner.lo) & (bpts < inner.hi), axis=1)
        if np.any(strictly_inside):
            raise InvalidParams("boundary points must lie outside the inner window")
        # only points within interaction range of the inner box matter
        gap = np.maximum(np.maximum(inner.lo - bpts, bpts - inner.hi), 0.0)
        bpts = bpts[np.linalg.norm(gap, axis=1) <= psi.range]
    d = inner.d
    vol = inner.volume
    pts = [] if initial is None else [as_point(p, d) for p in np.asarray(initial, dtype=float).reshape(-1, d)]
    rng = generator(seed, 7)
    empty = np.empty((0, d))

    def energy(x, others):
        allp = others if bpts.shape[0] == 0 else (np.vstack([others, bpts]) if len(others) else bpts)
        if len(allp) == 0:
            return psi.energy(empty)
        return psi.energy(np.asarray(allp) - x)

    for _ in range(n_sweeps):
        coin = rng.random(moves_per_sweep)
        loc = rng.random((moves_per_sweep, d))
        acc_u = rng.random(moves_per_sweep)
        pick = rng.random(moves_per_sweep)
        for m in range(moves_per_sweep):
            n = len(pts)
            if coin[m] < 0.5:
                x = inner.lo + loc[m] * inner.side
                w = boltzmann(beta, energy(x, np.asarray(pts) if n else empty))
                if acc_u[m] < tau * vol / (n + 1) * w:
                    pts.append(x)
            elif n:
                i = min(int(pick[m] * n), n - 1)
                others = np.asarray(pts[:i] + pts[i + 1 :]) if n > 1 else empty
                w = boltzmann(beta, energy(pts[i], others))
                ratio = math.inf if w == 0 else n / (tau * vol * w)
                if acc_u[m] < ratio:
                    pts.pop(i)
    return PointConfiguration(np.asarray(pts).reshape(-1, d), inner)


# --------------------------------------------------------------------------
# Sampler specs and void probabilities


@dataclass(frozen=True)
class PoissonSpec:
    tau: float
    window: Window

    def draw(self, seed: int) -> PointConfiguration:
        return sample_poisson(self.tau, self.window, seed)


@dataclass(frozen=True)
class GibbsSpec:
    psi: Potential
    tau: float
    beta: float
    window: Window
    options: SamplerOptions = SamplerOptions()

    def draw(self, seed: int) -> PointConfiguration:
        return sample_gibbs(self.psi, self.tau, self.beta, self.window, seed, self.options).config

    def sample(self, seed: int) -> GibbsSample:
        return sample_gibbs(self.psi, self.tau, self.beta, self.window, seed, self.options)


def void_probability(sampler, center, r: float, n_reps: int, seed: int) -> dict:
    """Fraction of draws with no point in the closed ball ``B_r(center)``.

    Replication ``i`` uses the seed derived from ``(seed, i)``, so two sampler
    specs over the same window are coupled through their free process.
    """
    if n_reps < 1:
        raise ValueError("n_reps must be >= 1")
    if r < 0:
        raise ValueError("radius must be nonnegative")
    win = sampler.window
    c = as_point(center, win.d)
    if not win.periodic and (np.any(c - r < win.lo) or np.any(c + r > win.hi)):
        raise ValueError("the ball must fit inside the sampler window")
    if r == 0:
        return {"estimate": 1.0, "se": 0.0, "n_reps": n_reps}
    empty = 0
    for i in range(n_reps):
        cfg = sampler.draw(derive_seed(seed, i))
        if len(cfg) == 0 or not np.any(win.distance(c, cfg.points) <= r):
            empty += 1
    p = empty / n_reps
    return {"estimate": p, "se": math.sqrt(p * (1 - p) / n_reps), "n_reps": n_reps}
