import math

import numpy as np
import pytest

from gibbsgeom.potentials import (
    AreaInteraction,
    HardCore,
    StraussPair,
    admissibility_margin,
    boltzmann,
    is_admissible,
    local_energy,
    pair_insertion_energy,
)
from gibbsgeom.spatial import PointConfiguration, Window, empty_configuration

W = Window.cube(400, 2)


def cfg(pts):
    return PointConfiguration(np.asarray(pts, dtype=float).reshape(-1, 2), W)


def test_local_energy_examples():
    assert local_energy(HardCore(1), [0, 0], cfg([[0.5, 0]])) == math.inf
    assert local_energy(StraussPair(1, 0.7), [0, 0], cfg([[0.5, 0], [0.9, 0], [2, 0]])) == pytest.approx(1.4)
    area = AreaInteraction(1)
    assert local_energy(area, [0, 0], empty_configuration(W)) == pytest.approx(math.pi)
    assert local_energy(area, [0, 0], cfg([[0, 0]])) == 0.0


def test_area_energy_against_lens_formula():
    # one grain at distance h covers a lens of the unit disc
    h = 1.0
    lens = 2 * math.acos(h / 2) - 0.5 * h * math.sqrt(4 - h * h)
    got = local_energy(AreaInteraction(1), [0, 0], cfg([[h, 0]]))
    assert got == pytest.approx(math.pi - lens, abs=2e-3)


def test_ranges():
    assert HardCore(0.3).range == 0.3
    assert StraussPair(1.5, 2).range == 1.5
    assert AreaInteraction(0.4).range == 0.8


@pytest.mark.parametrize("psi", [HardCore(1.0), StraussPair(1.0, 0.5), AreaInteraction(0.5)])
def test_finite_range(psi):
    rng = np.random.default_rng(5)
    for _ in range(50):
        pts = rng.uniform(-3, 3, (int(rng.integers(0, 10)), 2))
        base = local_energy(psi, [0, 0], cfg(pts))
        ang = rng.uniform(0, 2 * math.pi)
        far = (psi.range + rng.uniform(1e-6, 4)) * np.array([math.cos(ang), math.sin(ang)])
        assert local_energy(psi, [0, 0], cfg(np.vstack([pts, far]))) == base


def test_pair_insertion_examples():
    a = 0.8
    assert pair_insertion_energy(StraussPair(1, a), [0, 0], [0.5, 0], empty_configuration(W)) == a
    assert pair_insertion_energy(HardCore(1), [0, 0], [0.5, 0], empty_configuration(W)) == math.inf
    psi = StraussPair(1, a)
    c = cfg([[0.2, 0.0], [5.0, 5.0]])
    x, y = [0, 0], [-5.0, -5.0]
    assert pair_insertion_energy(psi, x, y, c) == local_energy(psi, x, c) + local_energy(psi, y, c)
    with pytest.raises(ValueError):
        pair_insertion_energy(psi, x, x, c)


def test_admissibility_examples():
    assert admissibility_margin(HardCore(1), 0.05, 3.0, 2) == pytest.approx(0.6283185307, rel=1e-9)
    assert is_admissible(HardCore(1), 0.05, 0.0, 2)
    assert admissibility_margin(HardCore(1), 0.1, 1.0, 2) == pytest.approx(1.2566370614, rel=1e-9)
    assert not is_admissible(HardCore(1), 0.1, 1.0, 2)
    assert admissibility_margin(StraussPair(1, 1), 1e-12, 1.0, 2) < 1e-10


def test_boltzmann_conventions():
    assert boltzmann(0.0, math.inf) == 1.0
    assert boltzmann(2.0, math.inf) == 0.0
    assert boltzmann(2.0, 0.5) == pytest.approx(math.exp(-1.0))
