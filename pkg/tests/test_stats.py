import math

import numpy as np
import pytest
from scipy import integrate
from scipy.stats import norm

from gibbsgeom.errors import DegenerateVariance, InsufficientTail, InvalidParams
from gibbsgeom.oracles import kolmogorov_bruteforce
from gibbsgeom.potentials import HardCore, StraussPair
from gibbsgeom.sampler import GibbsSpec, void_probability
from gibbsgeom.scores import Clique, Constant, KnnLength
from gibbsgeom.spatial import PERIODIC, Window
from gibbsgeom.stats import (
    ExperimentSpec,
    Quadrature,
    clt_scan,
    conditional_variance_probe,
    estimate_c_pair,
    estimate_c_point,
    estimate_sigma2,
    exact_mean,
    fit_survival,
    jackknife,
    jackknife_variance,
    kolmogorov_distance,
    lens_area,
    map_ordered,
    poisson_edge_c_pair,
    poisson_edge_sigma2,
    sample_variance,
    standardize,
    tail_estimate,
    truncation_mismatch,
    variance_scan,
)


def exp_spec(**kw):
    base = dict(psi=StraussPair(1, 1), tau=0.05, beta=1.0, score=Clique(1, 1.0), lambdas=(100.0, 400.0), n_reps=30, seed=5)
    base.update(kw)
    return ExperimentSpec(**base)


# basic estimators --------------------------------------------------------


def test_exact_sums_order_independent():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(1000) * 10.0 ** rng.integers(-8, 8, 1000)
    p = rng.permutation(x)
    assert exact_mean(x) == exact_mean(p)
    assert sample_variance(x) == sample_variance(p)


def test_jackknife_variance_matches_brute_force():
    x = np.random.default_rng(1).exponential(size=40)
    var, se = jackknife_variance(x)
    assert var == pytest.approx(np.var(x, ddof=1), rel=1e-12)
    loo = np.array([np.var(np.delete(x, i), ddof=1) for i in range(x.size)])
    brute = math.sqrt((x.size - 1) / x.size * np.sum((loo - loo.mean()) ** 2))
    assert se == pytest.approx(brute, rel=1e-9)


def test_generic_jackknife_of_a_ratio():
    rng = np.random.default_rng(2)
    cols = rng.uniform(1, 2, (30, 2))
    theta, se = jackknife(cols, lambda M, k: M[:, 0] / M[:, 1])
    assert theta == pytest.approx(cols[:, 0].mean() / cols[:, 1].mean())
    loo = [np.delete(cols, i, 0).mean(0) for i in range(30)]
    th = np.array([a / b for a, b in loo])
    assert se == pytest.approx(math.sqrt(29 / 30 * np.sum((th - th.mean()) ** 2)), rel=1e-9)


def test_kolmogorov_staircase():
    n = 50
    x = norm.ppf((np.arange(1, n + 1) - 0.5) / n)
    assert kolmogorov_distance(x) == pytest.approx(0.5 / n, rel=1e-9)
    assert kolmogorov_distance([0.0]) == 0.5


def test_kolmogorov_matches_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(50):
        x = rng.standard_normal(int(rng.integers(2, 60))) * rng.uniform(0.5, 2)
        assert kolmogorov_distance(x) == pytest.approx(kolmogorov_bruteforce(x), abs=1e-12)


def test_kolmogorov_dkw():
    # DKW: P(d_K > 0.03) <= 2 exp(-2 n 0.03^2) < 1e-7 at n = 10^4
    x = np.random.default_rng(4).standard_normal(10_000)
    assert kolmogorov_distance(x) < 0.03


def test_degenerate_inputs():
    with pytest.raises(DegenerateVariance):
        kolmogorov_distance([1.0, 1.0, 1.0])
    with pytest.raises(DegenerateVariance):
        standardize([2.0, 2.0])
    with pytest.raises(InvalidParams):
        sample_variance([1.0])


def test_map_ordered_independent_of_workers():
    tasks = list(range(7))
    assert map_ordered(math.sqrt, tasks, 1) == map_ordered(math.sqrt, tasks, 3)


# tails -----------------------------------------------------------------


def test_fit_survival_exponential():
    v = np.random.default_rng(5).exponential(1 / 2.0, 20_000)
    est = fit_survival(v, np.linspace(0, 4, 41))
    assert est.slope == pytest.approx(-2.0, rel=0.1)
    assert est.r2 >= 0.9
    assert est.survival[0] == 1.0


def test_clique_radii_survival_vanishes_beyond_s():
    est = tail_estimate("stabilization_radius", exp_spec(n_reps=10, lambdas=(200.0,)), grid=np.linspace(0, 2, 21))
    assert np.all(est.survival[est.grid >= 1.0] == 0)
    assert np.all(est.survival[est.grid < 1.0] == 1)
    assert est.slope == -math.inf


def test_knn_radii_tail_on_poisson():
    # periodic, so no point loses cones to the boundary
    exp = exp_spec(score=KnnLength(1), tau=1.0, beta=0.0, lambdas=(400.0,), n_reps=10, boundary_mode=PERIODIC)
    est = tail_estimate("stabilization_radius", exp)
    assert est.slope < 0 and est.r2 >= 0.9


def test_beta_zero_clan_tail_is_degenerate():
    exp = exp_spec(beta=0.0, lambdas=(200.0,), n_reps=5)
    est = tail_estimate("clan_diameter", exp, grid=[0.0, 0.5, 1.0])
    assert np.all(est.survival == 0)
    with pytest.raises(InvalidParams):
        tail_estimate("nonsense", exp)


def test_sparse_tail_is_insufficient():
    exp = exp_spec(score=KnnLength(1), tau=1.0, beta=0.0, lambdas=(100.0,), n_reps=2)
    with pytest.raises(InsufficientTail):
        tail_estimate("stabilization_radius", exp, grid=[0.0, 100.0])


# truncation ------------------------------------------------------------


def test_mismatch_properties():
    grid = [0, 0.5, 1, 2, 4, 8, math.inf]
    rows = truncation_mismatch(exp_spec(lambdas=(400.0,), n_reps=40), grid)
    vals = [r["mismatch"] for r in rows]
    assert all(b <= a for a, b in zip(vals, vals[1:]))
    assert vals[-1] == 0.0
    rows0 = truncation_mismatch(exp_spec(beta=0.0, lambdas=(400.0,), n_reps=20), grid)
    assert all(r["mismatch"] == 0.0 for r in rows0)
    with pytest.raises(InvalidParams):
        truncation_mismatch(exp_spec(), [1, 0])


# variance and CLT scans ----------------------------------------------------


def test_zero_score_has_zero_variance():
    recs = variance_scan(exp_spec(score=Constant(0.0), n_reps=100))
    assert all(r.var == 0.0 and r.mean == 0.0 for r in recs)
    assert all(math.isnan(r.d_k) for r in recs)
    with pytest.raises(DegenerateVariance):
        clt_scan(exp_spec(score=Constant(0.0), n_reps=100), records=recs)


def test_clt_scan_needs_replicates():
    with pytest.raises(InvalidParams):
        clt_scan(exp_spec(n_reps=50))


def test_variance_scan_deterministic_across_workers():
    a = variance_scan(exp_spec(n_reps=12), workers=1)
    b = variance_scan(exp_spec(n_reps=12), workers=2)
    assert a == b


def test_variance_scan_records_overflow():
    from gibbsgeom.sampler import SamplerOptions

    recs = variance_scan(exp_spec(n_reps=3, options=SamplerOptions(max_clan_points=1)))
    assert all(r.error and r.error.startswith("ClanOverflow") for r in recs)


# closed forms ---------------------------------------------------------------


def test_lens_area():
    assert lens_area(1.0, 0.0) == pytest.approx(math.pi)
    assert lens_area(1.0, 2.0) == 0.0
    # Monte Carlo check at h = 1
    rng = np.random.default_rng(6)
    u = rng.uniform(-1, 1, (400_000, 2))
    inside = (np.sum(u**2, 1) <= 1) & (np.sum((u - [1, 0]) ** 2, 1) <= 1)
    assert lens_area(1.0, 1.0) == pytest.approx(4 * inside.mean(), abs=0.01)


@pytest.mark.parametrize("tau,s", [(1.0, 1.0), (0.3, 1.5)])
def test_edge_sigma2_equals_integrated_pair_formula(tau, s):
    # sigma^2 = E xi^2 - tau * int c(0, y) dy with E xi^2 = (m + m^2)/4
    m = tau * math.pi * s * s
    c2 = (m + m * m) / 4
    inner, _ = integrate.quad(lambda h: 2 * math.pi * h * poisson_edge_c_pair(tau, s, h), 0, s)
    outer, _ = integrate.quad(lambda h: 2 * math.pi * h * poisson_edge_c_pair(tau, s, h), s, 2 * s)
    assert poisson_edge_sigma2(tau, s) == pytest.approx(c2 - tau * (inner + outer), rel=1e-8)


# correlation estimators ------------------------------------------------------


def test_c_point_constant_poisson_is_exact():
    res = estimate_c_point(Constant(1.0), StraussPair(1, 1), 1.0, 0.0, 20, 1)
    assert res["c"] == 1.0 and res["se_c"] == 0.0


def test_c_point_clique_poisson():
    tau = 1.0
    res = estimate_c_point(Clique(1, 1.0), StraussPair(1, 1), tau, 0.0, 2000, 2)
    assert abs(res["c"] - tau * math.pi / 2) <= 3 * res["se_c"]


def test_c_point_constant_hard_core_matches_void_probability():
    tau, n = 0.05, 2000
    res = estimate_c_point(Constant(1.0), HardCore(1), tau, 1.0, n, 3)
    void = void_probability(GibbsSpec(HardCore(1), tau, 1.0, Window.cube(49, 2)), [0, 0], 1.0, n, 4)
    assert abs(res["c"] - void["estimate"]) <= 3 * math.hypot(res["se_c"], void["se"])


@pytest.mark.parametrize("h", [0.5, 1.5, 3.0])
def test_c_pair_clique_poisson(h):
    tau = 1.0
    res = estimate_c_pair(Clique(1, 1.0), StraussPair(1, 1), tau, 0.0, [h, 0.0], 1500, 7)
    exact = poisson_edge_c_pair(tau, 1.0, h)
    assert abs(res["c_pair"] - exact) <= 3 * res["se"] + 1e-12


def test_sigma2_constant_poisson_is_one():
    res = estimate_sigma2(Constant(1.0), StraussPair(1, 1), 0.5, 0.0, Quadrature(2.0, 4, 20), 1)
    assert res["sigma2"] == 1.0


def test_sigma2_rejects_unsupported_scores():
    from gibbsgeom.scores import MaximalPoint, RegionA

    with pytest.raises(InvalidParams):
        estimate_sigma2(MaximalPoint(RegionA.linear(2), 10.0), StraussPair(1, 1), 0.5, 0.0, Quadrature(2.0), 1)
    with pytest.raises(InvalidParams):
        estimate_sigma2(Constant(), StraussPair(1, 1), 0.5, 0.0, Quadrature(2.0), 1, method="bogus")


# probe ---------------------------------------------------------------------------


def test_probe_zero_score():
    res = conditional_variance_probe(Constant(0.0), StraussPair(1, 1), 0.05, 1.0, 4.0, 4.0, 3, 3, 1)
    assert res["estimate"] == 0.0


def test_probe_validates():
    with pytest.raises(InvalidParams):
        conditional_variance_probe(Constant(1.0), StraussPair(1, 1), 0.05, 1.0, 4.0, 2.0, 3, 3, 1)
    with pytest.raises(InvalidParams):
        conditional_variance_probe(Constant(1.0), StraussPair(1, 1), 0.05, 1.0, 4.0, 4.0, 1, 3, 1)
