"""Finite-range potentials and their local (insertion) energies.

Energies are evaluated on displacement vectors ``y - x`` so that the same
code serves free and periodic windows. ``math.inf`` stands for a forbidden
insertion.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Union

import numpy as np
from scipy.stats import qmc
from scipy.special import ndtri

from .spatial import PointConfiguration, as_point, ball_volume

QMC_POINTS = 4096
_QMC_SEED = 20140601


@lru_cache(maxsize=None)
def _unit_ball_nodes(d: int) -> np.ndarray:
    """Fixed low-discrepancy nodes, uniformly spread over the unit ball."""
    n = QMC_POINTS
    if d == 1:
        return ((np.arange(n) + 0.5) / n * 2 - 1).reshape(-1, 1)
    if d == 2:
        u = qmc.Halton(d=2, scramble=True, seed=_QMC_SEED).random(n)
        rad = np.sqrt(u[:, 0])
        ang = 2 * np.pi * u[:, 1]
        nodes = np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])
    else:
        # first coordinate drives the radius, the rest a Gaussian direction
        u = qmc.Halton(d=d + 1, scramble=True, seed=_QMC_SEED).random(n)
        g = ndtri(np.clip(u[:, 1:], 1e-12, 1 - 1e-12))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        nodes = g * u[:, :1] ** (1.0 / d)
    nodes.setflags(write=False)
    return nodes


@dataclass(frozen=True)
class HardCore:
    r_hc: float

    def __post_init__(self):
        if not self.r_hc > 0:
            raise ValueError("hard-core radius must be positive")

    @property
    def range(self) -> float:
        return self.r_hc

    def energy(self, rel: np.ndarray) -> float:
        rel = np.asarray(rel, dtype=float)
        if rel.shape[0] and np.any(np.einsum("ij,ij->i", rel, rel) <= self.r_hc**2):
            return math.inf
        return 0.0


@dataclass(frozen=True)
class StraussPair:
    r_p: float
    a: float

    def __post_init__(self):
        if not self.r_p > 0:
            raise ValueError("interaction radius must be positive")
        if not self.a >= 0:
            raise ValueError("pair energy must be nonnegative")

    @property
    def range(self) -> float:
        return self.r_p

    def energy(self, rel: np.ndarray) -> float:
        rel = np.asarray(rel, dtype=float)
        if rel.shape[0] == 0:
            return 0.0
        count = int(np.count_nonzero(np.einsum("ij,ij->i", rel, rel) <= self.r_p**2))
        return self.a * count


@dataclass(frozen=True)
class AreaInteraction:
    """Uncovered volume of ``B_r(x)`` by the grains ``B_r(y)``; range ``2r``."""

    r_a: float

    def __post_init__(self):
        if not self.r_a > 0:
            raise ValueError("grain radius must be positive")

    @property
    def range(self) -> float:
        return 2 * self.r_a

    def energy(self, rel: np.ndarray) -> float:
        rel = np.asarray(rel, dtype=float)
        d = rel.shape[1] if rel.ndim == 2 else 1
        full = ball_volume(d, self.r_a)
        if rel.shape[0] == 0:
            return full
        rel = rel[np.einsum("ij,ij->i", rel, rel) <= (2 * self.r_a) ** 2]
        if rel.shape[0] == 0:
            return full
        nodes = _unit_ball_nodes(d) * self.r_a
        covered = np.zeros(nodes.shape[0], dtype=bool)
        r2 = self.r_a**2
        for c in rel:
            diff = nodes - c
            covered |= np.einsum("ij,ij->i", diff, diff) <= r2
        return full * (1.0 - np.count_nonzero(covered) / nodes.shape[0])


Potential = Union[HardCore, StraussPair, AreaInteraction]


def min_energy(psi: Potential) -> float:
    """Infimum of the local energy; every supported variant has nonnegative energies."""
    return 0.0


def local_energy(psi: Potential, x, config: PointConfiguration) -> float:
    """Energy cost of inserting ``x`` into ``config``."""
    x = as_point(x, config.d)
    if len(config) == 0:
        return psi.energy(np.empty((0, config.d)))
    rel = config.window.displacement(x, config.points)
    return psi.energy(rel)


def pair_insertion_energy(psi: Potential, x, y, config: PointConfiguration) -> float:
    """Energy of inserting ``x`` then ``y``: ``Delta(x, X) + Delta(y, X + x)``."""
    x = as_point(x, config.d)
    y = as_point(y, config.d)
    if np.array_equal(x, y):
        raise ValueError("pair insertion needs two distinct points")
    first = local_energy(psi, x, config)
    pts = np.vstack([config.points, x])
    second = psi.energy(config.window.displacement(y, pts))
    return first + second


def boltzmann(beta: float, energy: float) -> float:
    """``exp(-beta * energy)`` with ``0 * inf := 0``."""
    if beta == 0:
        return 1.0
    if math.isinf(energy):
        return 0.0
    return math.exp(-beta * energy)


def admissibility_margin(psi: Potential, tau: float, beta: float, d: int) -> float:
    """``tau * v_d * exp(-beta * m0) * (range + 1)^d``; admissible iff < 1."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    if not beta >= 0:
        raise ValueError("beta must be nonnegative")
    return tau * ball_volume(d, 1.0) * math.exp(-beta * min_energy(psi)) * (psi.range + 1.0) ** d


def is_admissible(psi: Potential, tau: float, beta: float, d: int) -> bool:
    return admissibility_margin(psi, tau, beta, d) < 1.0
