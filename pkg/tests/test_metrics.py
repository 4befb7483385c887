import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
from scipy.stats import multivariate_normal, norm

from borrowoc import (
    ContrastBorrowDesign,
    ControlBorrowDesign,
    DesignPrior,
    MetricRequest,
    MixtureNormal,
    SuccessRule,
    average_metric,
    average_type1_null,
    classical_type1,
    conditional_power,
    critical_curve,
    critical_value,
    decision_table,
    evaluate,
    mc_crosscheck,
    power_curve,
    preposterior_fp,
    prior_prob_benefit,
    scan_extremum,
    upper_bound_fp,
)
from borrowoc.metrics import make_rng, prior_prob_null
from conftest import LOG_OR, S_NEW, mc_gap, random_mixture

ALPHA = 0.025
GH_X, GH_W = np.polynomial.hermite_e.hermegauss(160)
GH_W = GH_W / GH_W.sum()


def contrast_cp_oracle(design, delta):
    """Success probability from the critical value and the sampling normal only."""
    y = critical_value(design)
    z = (y - delta) / design.s_new
    return norm.sf(z) if design.rule.direction == "greater" else norm.cdf(z)


def control_cp_oracle(design, th_c, th_t):
    """Gauss-Hermite over ybar_c around the boundary curve."""
    yc = th_c + design.se_c * GH_X
    yt = critical_curve(design, yc)
    z = (yt - th_t) / design.se_t
    tail = norm.sf(z) if design.rule.direction == "greater" else norm.cdf(z)
    return float(GH_W @ tail)


def random_contrast(seed):
    rng = np.random.default_rng(seed)
    rule = SuccessRule(float(rng.normal(0, 0.2)), str(rng.choice(["greater", "less"])))
    return rng, ContrastBorrowDesign(float(rng.uniform(0.1, 1.0)), random_mixture(rng, 3, scale=0.7), rule)


class TestConditionalPower:
    def test_vague_size(self):
        d = ContrastBorrowDesign(0.3, MixtureNormal.normal(0, 1e4))
        assert conditional_power(d, 0.0) == pytest.approx(ALPHA, abs=1e-6)

    @pytest.mark.parametrize("seed", range(6))
    def test_contrast_against_normal_tail(self, seed):
        _, d = random_contrast(seed)
        for delta in (-1.0, 0.0, 0.4, 1.3):
            assert conditional_power(d, delta) == pytest.approx(contrast_cp_oracle(d, delta), abs=1e-12)

    @pytest.mark.parametrize("th", [(-50.0, -50.0), (-30.0, -100.0), (-120.0, -110.0)])
    def test_control_against_hermite(self, crohns_design, th):
        assert conditional_power(crohns_design, th) == pytest.approx(control_cp_oracle(crohns_design, *th), abs=1e-7)

    def test_case1_power(self, crohns_design, vague_c):
        d = crohns_design.with_prior(vague_c)
        assert conditional_power(d, (-50.0, -120.0)) == pytest.approx(0.83, abs=5e-3)

    def test_case2_power(self, lupus_design, vague_contrast):
        assert conditional_power(lupus_design, LOG_OR) == pytest.approx(0.77, abs=0.01)
        assert conditional_power(lupus_design.with_prior(vague_contrast), LOG_OR) == pytest.approx(0.21, abs=0.01)

    def test_monotone_in_truth(self, lupus_design):
        _, cp = power_curve(lupus_design, np.linspace(-1, 2, 61))
        assert np.all(np.diff(cp) >= 0)


class TestCurves:
    def test_vague_flat(self, crohns_design, vague_c):
        _, cp = classical_type1(crohns_design.with_prior(vague_c), np.linspace(-150, 50, 21))
        np.testing.assert_allclose(cp, ALPHA, atol=1e-3)

    def test_contrast_single_point(self, lupus_design):
        x, y = classical_type1(lupus_design)
        assert x.tolist() == [0.0] and y[0] == pytest.approx(0.332, abs=1e-9)

    def test_control_needs_grid(self, crohns_design):
        with pytest.raises(ValueError):
            classical_type1(crohns_design)

    def test_scan_extrema(self, crohns_design, map_prior, vague_c):
        _, vmax = scan_extremum(crohns_design.with_prior(map_prior), (-150, 50), points=41)
        assert vmax == pytest.approx(0.19, abs=0.01)
        _, rmax = scan_extremum(crohns_design, (-150, 50), points=41)
        assert rmax == pytest.approx(0.11, abs=0.01)
        v = crohns_design.with_prior(vague_c)
        lo = scan_extremum(v, (-150, 50), "min", points=11)[1]
        hi = scan_extremum(v, (-150, 50), "max", points=11)[1]
        assert lo == pytest.approx(ALPHA, abs=1e-3) and hi == pytest.approx(ALPHA, abs=1e-3)

    def test_scan_not_below_grid(self, crohns_design):
        grid = np.linspace(-150, 50, 41)
        _, cp = classical_type1(crohns_design, grid)
        assert scan_extremum(crohns_design, (-150, 50), points=41)[1] >= cp.max()

    def test_extreme_drift(self, crohns_design, map_prior):
        assert conditional_power(crohns_design.with_prior(map_prior), (-1200.0, -1200.0)) > 0.99

    def test_scan_range_checked(self, crohns_design):
        with pytest.raises(ValueError):
            scan_extremum(crohns_design, (50, -150))


class TestAverages:
    @pytest.mark.parametrize("seed", range(6))
    def test_mixture_closed_form(self, seed):
        rng, d = random_contrast(seed)
        p = random_mixture(rng, 3, scale=0.8)
        y = critical_value(d)
        z = (y - p.means) / np.sqrt(d.s_new ** 2 + p.variances)
        tails = norm.sf(z) if d.rule.direction == "greater" else norm.cdf(z)
        assert average_metric(d, p).value == pytest.approx(float(p.weights @ tails), abs=1e-9)

    @pytest.mark.parametrize("seed", range(4))
    def test_truncated_bivariate(self, seed):
        rng, d = random_contrast(seed + 100)
        p = random_mixture(rng, 3, scale=0.8)
        y, d0, sgn = critical_value(d), d.rule.delta_null, d.rule.sign
        joint = 0.0
        for w, m, v in zip(p.weights, p.means, p.variances):
            # (sgn*delta, sgn*Y) is bivariate normal; null is sgn*delta <= sgn*d0, success sgn*Y >= sgn*y
            cov = [[v, v], [v, v + d.s_new ** 2]]
            mvn = multivariate_normal([sgn * m, sgn * m], cov)
            both = norm.cdf(sgn * d0, sgn * m, math.sqrt(v)) - mvn.cdf([sgn * d0, sgn * y])
            joint += w * both
        mass = prior_prob_null(p, d0, d.rule.direction)
        if mass < 1e-6:
            pytest.skip("negligible null mass")
        assert average_type1_null(d, p).value == pytest.approx(joint / mass, abs=2e-6)
        assert preposterior_fp(d, p).value == pytest.approx(joint, abs=2e-6)

    def test_truncated_quad(self, lupus_design, robust_contrast):
        mass = robust_contrast.cdf(0.0)

        def f(x):
            return conditional_power(lupus_design, x) * robust_contrast.density(np.array([x]))[0]

        num = quad(f, -40, 0, epsabs=1e-13, epsrel=1e-12, limit=400)[0]
        assert average_type1_null(lupus_design, robust_contrast).value == pytest.approx(num / mass, abs=1e-8)

    def test_truncated_design_prior_control(self, crohns_design):
        prior = DesignPrior.truncated(MixtureNormal.normal(-60.0, 30.0), -50.0, keep="below")
        mass = norm.cdf(-50.0, -60.0, 30.0)

        def f(th):
            return control_cp_oracle(crohns_design, th, th) * norm.pdf(th, -60.0, 30.0) / mass

        oracle = quad(f, -60 - 12 * 30, -50.0, epsabs=1e-10, limit=200)[0]
        assert average_metric(crohns_design, prior).value == pytest.approx(oracle, abs=1e-6)

    def test_control_collapse_nested(self, crohns_design):
        prior = MixtureNormal([0.6, 0.4], [-80.0, -40.0], [25.0, 10.0])

        def f(th):
            return control_cp_oracle(crohns_design, th, th - 30.0) * prior.density(np.array([th]))[0]

        oracle = quad(f, -400, 200, points=[-80, -40], epsabs=1e-10, limit=400)[0]
        assert average_metric(crohns_design, prior, -30.0).value == pytest.approx(oracle, abs=1e-6)

    @pytest.mark.parametrize("x", [-0.3, 0.0, 0.6])
    def test_point_mass_contrast(self, lupus_design, x):
        assert average_metric(lupus_design, DesignPrior.point_mass(x)).value == conditional_power(lupus_design, x)

    def test_point_mass_control(self, crohns_design):
        rep = average_metric(crohns_design, DesignPrior.point_mass(-70.0), -20.0)
        assert rep.value == pytest.approx(conditional_power(crohns_design, (-70.0, -90.0)), abs=1e-9)

    def test_spike_and_slab_rejected(self, lupus_design, robust_contrast):
        with pytest.raises(ValueError, match="spike"):
            average_metric(lupus_design, DesignPrior.spike_and_slab(0.0, 0.15, robust_contrast))

    def test_zero_null_mass(self, lupus_design):
        with pytest.raises(ValueError, match="zero mass"):
            average_type1_null(lupus_design, MixtureNormal.normal(50.0, 0.1))

    def test_prior_above_null(self, lupus_design):
        p = MixtureNormal.normal(50.0, 0.1)
        assert preposterior_fp(lupus_design, p).value == 0.0
        t = decision_table(lupus_design, p)
        assert t["p_FP"] == 0.0 and t["p_TN"] == 0.0

    def test_mixture_treatment_prior_falls_back(self, robust_map, crohns_rule):
        d = ControlBorrowDesign(40, 20, 88.0, robust_map, robust_map, crohns_rule)
        with pytest.warns(RuntimeWarning, match="Monte Carlo"):
            rep = average_metric(d, robust_map, mc_reps=20_000, seed=3)
        assert rep.method == "monte_carlo" and "quadrature unavailable" in rep.extra["note"]


class TestControlTheorems:
    @pytest.mark.parametrize("prior", ["vague_c", "map_prior", "robust_map"])
    def test_case1_diagonal(self, crohns_design, prior, request):
        p = request.getfixturevalue(prior)
        assert average_metric(crohns_design.with_prior(p), p).value == pytest.approx(ALPHA, abs=2e-3)

    @settings(max_examples=8, deadline=None)
    @given(st.integers(0, 10_000))
    def test_random_diagonal(self, seed):
        rng = np.random.default_rng(seed)
        sigma = float(rng.uniform(1, 10))
        pc = random_mixture(rng, 3, scale=sigma)
        d = ControlBorrowDesign(int(rng.integers(5, 80)), int(rng.integers(5, 80)), sigma,
                                MixtureNormal.normal(0.0, 1e4 * sigma), pc,
                                SuccessRule(0.0, str(rng.choice(["greater", "less"]))))
        assert average_metric(d, pc).value == pytest.approx(ALPHA, abs=3e-3)

    @pytest.mark.parametrize("design_prior", [MixtureNormal.normal(-90, 25), MixtureNormal.normal(0, 40)])
    def test_vague_invariance(self, crohns_design, vague_c, design_prior):
        d = crohns_design.with_prior(vague_c)
        assert average_metric(d, design_prior).value == pytest.approx(ALPHA, abs=2e-3)


class TestPreposterior:
    @pytest.mark.parametrize("seed", range(10))
    def test_ordering_and_identity(self, seed):
        rng, d = random_contrast(seed + 200)
        p = random_mixture(rng, 3, scale=0.8)
        if prior_prob_null(p, d.rule.delta_null, d.rule.direction) < 1e-9:
            pytest.skip("no null mass")
        fp = preposterior_fp(d, p)
        ub = upper_bound_fp(d, p).value
        assert fp.value <= ub + 1e-12
        assert ub <= conditional_power(d, d.rule.delta_null) + 1e-15
        assert fp.extra["identity_gap"] <= 1e-10

    @pytest.mark.parametrize("seed", range(10))
    def test_decision_table(self, seed):
        rng, d = random_contrast(seed + 300)
        p = random_mixture(rng, 3, scale=0.8)
        t = decision_table(d, p)
        assert sum(t.values()) == pytest.approx(1.0, abs=1e-8)
        assert t["p_TP"] + t["p_FP"] == pytest.approx(average_metric(d, p).value, abs=1e-8)
        assert min(t.values()) >= -1e-12

    def test_spike_bound(self, lupus_design, robust_contrast):
        ss = DesignPrior.spike_and_slab(0.0, 0.15, robust_contrast)
        assert upper_bound_fp(lupus_design, ss).value == pytest.approx(0.332 * 0.15, abs=1e-12)

    def test_bound_is_product(self, lupus_design, robust_contrast):
        rep = upper_bound_fp(lupus_design, robust_contrast)
        assert rep.value == conditional_power(lupus_design, 0.0) * robust_contrast.cdf(0.0)

    def test_requires_contrast(self, crohns_design, map_prior):
        for f in (average_type1_null, preposterior_fp, upper_bound_fp, decision_table):
            with pytest.raises(TypeError):
                f(crohns_design, map_prior)

    @pytest.mark.parametrize("prior, expect", [("vague_contrast", 0.5), ("robust_contrast", 0.85),
                                               ("adult", 0.999)])
    def test_prior_benefit(self, prior, expect, request):
        v = prior_prob_benefit(request.getfixturevalue(prior))
        if expect == 0.999:
            assert v > expect
        else:
            assert v == pytest.approx(expect, abs=5e-3)


class TestMonteCarlo:
    def test_min_reps(self, lupus_design):
        with pytest.raises(ValueError):
            mc_crosscheck(MetricRequest("classical_type1", lupus_design), 100)

    def test_vague_size(self):
        d = ContrastBorrowDesign(0.3, MixtureNormal.normal(0, 1e4))
        rep = mc_crosscheck(MetricRequest("classical_type1", d), 200_000, seed=1)[0]
        assert mc_gap(ALPHA, rep) <= 3
        assert rep.abs_error_estimate == pytest.approx(math.sqrt(rep.value * (1 - rep.value) / 200_000))

    def test_reproducible_and_streams_differ(self, lupus_design, robust_contrast):
        req = MetricRequest("average_type1", lupus_design, DesignPrior.from_mixture(robust_contrast), name="a")
        r1 = mc_crosscheck(req, 50_000, seed=5)[0]
        r2 = mc_crosscheck(req, 50_000, seed=5)[0]
        assert r1.value == r2.value
        a = make_rng(5, "a").random(4)
        b = make_rng(5, "b").random(4)
        assert not np.array_equal(a, b)

    @pytest.mark.parametrize("metric", ["average_type1", "average_type1_null", "preposterior_fp",
                                        "upper_bound_fp", "decision_table"])
    def test_contrast_metrics(self, lupus_design, robust_contrast, metric):
        req = MetricRequest(metric, lupus_design, DesignPrior.from_mixture(robust_contrast), name=metric)
        q = evaluate(req)
        mc = evaluate(req, method="monte_carlo", mc_reps=400_000, seed=11)
        assert [r.name for r in q] == [r.name for r in mc]
        for a, b in zip(q, mc):
            assert mc_gap(a.value, b) <= 3, (a, b)

    def test_control_metrics(self, crohns_design, map_prior):
        dp = DesignPrior.from_mixture(map_prior)
        for req in (MetricRequest("average_type1", crohns_design, dp, name="t1"),
                    MetricRequest("average_power", crohns_design, dp, delta_star=-40.0, name="pw"),
                    MetricRequest("conditional_power", crohns_design, truth=(-80.0, -100.0), name="cp")):
            q = evaluate(req)[0]
            mc = evaluate(req, method="monte_carlo", mc_reps=200_000, seed=2)[0]
            assert mc_gap(q.value, mc) <= 3, (q, mc)

    def test_fallback_is_recorded(self, robust_contrast):
        d = ContrastBorrowDesign(25.0, robust_contrast)
        req = MetricRequest("classical_type1", d, name="wide")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            rep = evaluate(req, mc_reps=20_000)[0]
        assert rep.method == "monte_carlo" and rep.n_reps == 20_000
