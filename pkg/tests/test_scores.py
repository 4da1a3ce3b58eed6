import math

import numpy as np
import pytest

from gibbsgeom.errors import DomainError, InvalidParams, MissingClanData, MissingMarks
from gibbsgeom.oracles import SUITES, clique_incidences, knn_graph_length
from gibbsgeom.potentials import StraussPair
from gibbsgeom.sampler import sample_gibbs
from gibbsgeom.scores import (
    BirthGrowth,
    Clique,
    Constant,
    InsuranceClaim,
    KnnLength,
    MaximalPoint,
    RegionA,
    VoronoiLength,
    birth_growth_accept,
    clique_score,
    insurance_claim,
    knn_length_score,
    maximal_indicator,
    score,
    score_all,
    total_score,
    truncated_total,
    voronoi_length_score,
)
from gibbsgeom.spatial import PointConfiguration, Window, empty_configuration

W2 = Window.cube(400, 2)


def cfg(pts, win=W2, marks=None):
    pts = np.asarray(pts, dtype=float).reshape(-1, win.d)
    return PointConfiguration(pts, win, None if marks is None else np.asarray(marks, dtype=float))


def rand_cfg(rng, n, win=W2, marks=False):
    pts = win.lo + rng.random((n, win.d)) * win.side
    return cfg(pts, win, rng.uniform(0, 3, n) if marks else None)


# examples ----------------------------------------------------------------


def test_clique_examples():
    h = 0.5 * math.sqrt(3) / 2
    tri = [[0, 0], [0.5, 0], [0.25, h]]
    for i in range(3):
        rest = cfg([p for j, p in enumerate(tri) if j != i])
        assert clique_score(2, 1.0, tri[i], rest).value == pytest.approx(1 / 3)
    assert total_score(Clique(2, 1.0), cfg(tri)) == pytest.approx(1.0)
    assert clique_score(1, 1.0, [0, 0], cfg([[0.5, 0], [0, 0.5]])).value == 1.0
    assert clique_score(1, 1.0, [0, 0], cfg([[3, 0]])).value == 0.0
    assert total_score(Clique(2, 1.0), empty_configuration(W2)) == 0.0


def test_clique_radius_is_s():
    assert clique_score(1, 0.7, [0, 0], cfg([[0.5, 0]])).radius == 0.7


def test_knn_examples():
    assert knn_length_score(1, [0, 0], cfg([[1, 0]])).value == pytest.approx(0.5)
    assert total_score(KnnLength(1), cfg([[0, 0], [1, 0]])) == pytest.approx(1.0)
    line = [[0, 0], [1, 0], [3, 0]]
    vals, _, _ = score_all(KnnLength(1), cfg(line))
    assert vals == pytest.approx([0.5, 1.5, 1.0])
    assert total_score(KnnLength(1), cfg(line)) == pytest.approx(3.0)
    assert knn_length_score(1, [0, 0], empty_configuration(W2)).value == 0.0


def test_voronoi_examples():
    r = voronoi_length_score([0, 0], cfg([[1, 0], [-1, 0], [0, 1], [0, -1]]))
    assert r.value == pytest.approx(2.0)
    assert voronoi_length_score([0, 0], cfg([[1, 0]])).value == 0.0
    assert voronoi_length_score([0, 0], empty_configuration(W2)).value == 0.0


def test_maximal_examples():
    region = RegionA.linear(2)
    big = Window.cube(100, 2)
    spec = dict(region=region, lam=100.0, anchor=(-5.0, -5.0))
    assert maximal_indicator([0, 0], cfg([[1, 1]], big), **spec).value == 0.0
    assert maximal_indicator([0, 0], cfg([[-1, 0.5]], big), **spec).value == 1.0


def test_birth_growth_examples():
    w = Window.cube(100, 1)
    assert birth_growth_accept(([0.0], 1.0), cfg([], w, marks=[]), 1.0).value == 1.0
    c = cfg([[0.0], [1.0]], w, marks=[0.0, 2.0])
    vals, _, _ = score_all(BirthGrowth(1.0), c)
    assert list(vals) == [1.0, 0.0]


def test_insurance_examples():
    w = Window.cube(400, 2)
    assert insurance_claim([0, 0], empty_configuration(w), 1, 1.0).value == 0.0
    assert insurance_claim([0, 0], cfg([[0.3, 0]], w), 1, 1.0).value == pytest.approx(0.3)
    assert insurance_claim([0, 0], cfg([[5, 0]], w), 1, 1.0).value == 1.0
    with pytest.raises(DomainError):
        insurance_claim([50, 0], empty_configuration(w), 1, 1.0)


def test_constant_score():
    assert score(Constant(2.5), [0, 0], cfg([[1, 1]])).value == 2.5
    assert total_score(Constant(), cfg([[0, 0], [1, 1], [2, 2]])) == 3.0


def test_errors():
    w3 = Window.cube(1000, 3)
    with pytest.raises(InvalidParams):
        voronoi_length_score([0, 0, 0], empty_configuration(w3))
    with pytest.raises(MissingMarks):
        score(BirthGrowth(1.0), [0, 0], cfg([[1, 1]]))
    with pytest.raises(DomainError):
        maximal_indicator([30, 30], cfg([[0, 0]], Window.cube(10000, 2)), RegionA.linear(2), 4.0)
    with pytest.raises(InvalidParams):
        Clique(0, 1.0)
    with pytest.raises(InvalidParams):
        Constant(-1.0)


# properties ----------------------------------------------------------------

SPECS = [Clique(1, 1.0), Clique(2, 1.5), KnnLength(1), KnnLength(3), VoronoiLength(), InsuranceClaim(2, 2.0), Constant(1.0)]


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: type(s).__name__)
def test_nonnegative_and_translation_invariant(spec):
    rng = np.random.default_rng(21)
    for _ in range(20):
        c = rand_cfg(rng, int(rng.integers(0, 40)), Window.cube(100, 2))
        x = rng.uniform(-5, 5, 2)
        r = score(spec, x, c)
        assert r.value >= 0
        y = rng.uniform(-100, 100, 2)
        shifted = PointConfiguration(c.points + y, W2.translated(y))
        r2 = score(spec, x + y, shifted)
        if isinstance(spec, InsuranceClaim):
            continue
        assert r2.value == pytest.approx(r.value, rel=1e-9, abs=1e-12)


def _stab_case(spec, rng):
    if isinstance(spec, BirthGrowth):
        w = Window.cube(400, 2)
        c = rand_cfg(rng, int(rng.integers(0, 40)), w, marks=True)
        return w, c, rng.uniform(-3, 3, 2), float(rng.uniform(0, 3))
    if isinstance(spec, MaximalPoint):
        w = Window.cube(spec.lam * 4, 2)
        inside = spec.corner + rng.random((int(rng.integers(0, 20)), 2)) * spec.scale
        inside = inside[spec.in_region(inside)] if len(inside) else inside
        while True:
            x = spec.corner + rng.random(2) * spec.scale
            if spec.in_region(x)[0]:
                break
        return w, cfg(inside, w), x, None
    # points crowd a small box inside a large window, leaving room to insert
    w = Window.cube(400, 2)
    pts = rng.uniform(-4, 4, (int(rng.integers(20, 80)), 2))
    return w, cfg(pts, w), rng.uniform(-3, 3, 2), None


STAB_SPECS = SPECS + [BirthGrowth(0.8), MaximalPoint(RegionA.linear(2), 25.0)]


@pytest.mark.parametrize("spec", STAB_SPECS, ids=lambda s: type(s).__name__)
def test_stabilization_by_insertion(spec):
    rng = np.random.default_rng(31)
    checked = 0
    for _ in range(40):
        w, c, x, mark = _stab_case(spec, rng)
        base = score(spec, x, c, mark)
        if not math.isfinite(base.radius):
            continue
        for _ in range(5):
            ang = rng.uniform(0, 2 * math.pi)
            dist = base.radius * (1 + 1e-9) + rng.uniform(1e-6, 3)
            z = x + dist * np.array([math.cos(ang), math.sin(ang)])
            if not w.contains(z)[0]:
                continue
            marks = None if c.marks is None else np.append(c.marks, rng.uniform(0, 3))
            bigger = PointConfiguration(np.vstack([c.points, z]), w, marks)
            assert score(spec, x, bigger, mark).value == base.value
            checked += 1
    assert checked > 20


# oracle equivalences ----------------------------------------------------------


@pytest.mark.parametrize("name", sorted(SUITES))
def test_oracle_suite(name):
    cases, fails = SUITES[name](100, 3)
    assert cases > 0 and fails == 0


def test_clique_total_matches_enumeration():
    rng = np.random.default_rng(4)
    for _ in range(30):
        pts = rng.uniform(0, 3, (int(rng.integers(0, 15)), 2))
        c = cfg(pts - 1.5)
        assert 3 * total_score(Clique(2, 1.0), c) == pytest.approx(clique_incidences(c.points, 2, 1.0), abs=1e-9)


def test_knn_total_matches_graph_length():
    rng = np.random.default_rng(5)
    c = rand_cfg(rng, 300, Window.cube(300, 2))
    c = PointConfiguration(c.points, W2)
    assert total_score(KnnLength(2), c) == pytest.approx(knn_graph_length(c.points, 2), rel=1e-12)


# truncation ------------------------------------------------------------------


def _strauss_sample(seed, beta=1.0):
    return sample_gibbs(StraussPair(1, 1), 0.05, beta, Window.cube(400, 2), seed)


def test_truncated_total_limits_and_monotonicity():
    spec = Clique(1, 1.0)
    s = _strauss_sample(3)
    full = total_score(spec, s.config)
    assert truncated_total(spec, s, math.inf) == full
    rhos = [0, 0.5, 1, 2, 4, 8, 16]
    vals = [truncated_total(spec, s, r) for r in rhos]
    assert all(a <= b for a, b in zip(vals, vals[1:]))


def test_truncated_total_beta_zero():
    spec = KnnLength(1)
    s = _strauss_sample(4, beta=0.0)
    full = total_score(spec, s.config)
    for rho in (0.0, 1.0, math.inf):
        assert truncated_total(spec, s, rho) == full


def test_truncated_total_needs_clan_data():
    class Bare:
        config = cfg([[0, 0]])

    with pytest.raises(MissingClanData):
        truncated_total(Constant(), Bare(), 1.0)
