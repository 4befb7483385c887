import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
from scipy.stats import norm

from borrowoc import (
    ContrastBorrowDesign,
    ControlBorrowDesign,
    MixtureNormal,
    MonotonicityError,
    SuccessRule,
    critical_curve,
    critical_value,
    is_success,
    posterior_success_prob,
)
from conftest import S_NEW, random_mixture

Z = norm.ppf(0.975)
HUGE = MixtureNormal.normal(0.0, 1e7)


class TestRule:
    @pytest.mark.parametrize("conf", [0.5, 1.0, 0.3])
    def test_confidence_domain(self, conf):
        with pytest.raises(ValueError):
            SuccessRule(confidence=conf)

    def test_direction(self):
        with pytest.raises(ValueError):
            SuccessRule(direction="up")
        assert SuccessRule(direction="less").sign == -1.0

    def test_design_domain(self, vague_c):
        with pytest.raises(ValueError):
            ContrastBorrowDesign(0.0, HUGE)
        with pytest.raises(ValueError):
            ControlBorrowDesign(0, 20, 88, vague_c, vague_c)
        with pytest.raises(ValueError):
            ControlBorrowDesign(40, 20, -1.0, vague_c, vague_c)


class TestPosteriorSuccess:
    def test_z_boundary(self):
        d = ContrastBorrowDesign(0.3, HUGE, SuccessRule(0.1))
        assert posterior_success_prob(d, 0.1 + 1.959964 * 0.3) == pytest.approx(0.975, abs=1e-6)

    def test_case2_grid_oracle(self, robust_contrast):
        d = ContrastBorrowDesign(0.2, robust_contrast)
        def f(x):
            return robust_contrast.density(np.array([x]))[0] * norm.pdf(0.48, x, 0.2)

        kw = dict(epsabs=0, epsrel=1e-13, limit=500)
        upper = quad(f, 0, 30, points=[0.48], **kw)[0]
        lower = quad(f, -30, 0, **kw)[0]
        assert posterior_success_prob(d, 0.48) == pytest.approx(upper / (upper + lower), abs=1e-9)

    def test_control_symmetry(self):
        prior = MixtureNormal.normal(1.0, 2.0)
        d = ControlBorrowDesign(30, 30, 5.0, prior, prior)
        assert posterior_success_prob(d, (1.7, 1.7)) == pytest.approx(0.5, abs=1e-14)

    def test_case1_mc_oracle(self, crohns_design):
        yc, yt = -47.0, -120.0
        pt = crohns_design.prior_t.posterior(yt, crohns_design.se_t)
        pc = crohns_design.prior_c.posterior(yc, crohns_design.se_c)
        rng = np.random.default_rng(11)
        n = 1_000_000
        diff = pt.sample(n, rng) - pc.sample(n, rng)
        p_mc = np.mean(diff < 0)
        se = math.sqrt(p_mc * (1 - p_mc) / n)
        assert abs(posterior_success_prob(crohns_design, (yt, yc)) - p_mc) <= 3 * se

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 10_000))
    def test_random_designs_mc(self, seed):
        rng = np.random.default_rng(seed)
        pt, pc = random_mixture(rng, 2, scale=3.0), random_mixture(rng, 3, scale=3.0)
        d = ControlBorrowDesign(int(rng.integers(5, 60)), int(rng.integers(5, 60)), float(rng.uniform(1, 8)),
                                pt, pc, SuccessRule(float(rng.normal()), str(rng.choice(["greater", "less"]))))
        yt, yc = rng.normal(0, 3, 2)
        n = 1_000_000
        tt = d.prior_t.posterior(yt, d.se_t).sample(n, rng)
        tc = d.prior_c.posterior(yc, d.se_c).sample(n, rng)
        diff = tt - tc
        p_mc = np.mean(diff > d.rule.delta_null) if d.rule.direction == "greater" else np.mean(diff < d.rule.delta_null)
        p = posterior_success_prob(d, (yt, yc))
        se = max(math.sqrt(p * (1 - p) / n), 1 / n)
        assert abs(p - p_mc) <= 3 * se + 1e-12

    def test_vectorised_and_scalar(self, lupus_design):
        y = np.array([[0.1, 0.5], [0.9, -0.2]])
        out = posterior_success_prob(lupus_design, y)
        assert out.shape == (2, 2)
        assert out[0, 1] == posterior_success_prob(lupus_design, 0.5)

    @pytest.mark.parametrize("bad", [math.nan, math.inf])
    def test_non_finite(self, lupus_design, crohns_design, bad):
        with pytest.raises(ValueError):
            posterior_success_prob(lupus_design, bad)
        with pytest.raises(ValueError):
            posterior_success_prob(crohns_design, (bad, 0.0))

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-5, 5), st.floats(-3, 3), st.floats(0.05, 3))
    def test_location_equivariance(self, y, c, s):
        prior = MixtureNormal([0.6, 0.4], [0.5, -0.2], [0.3, 1.5])
        a = posterior_success_prob(ContrastBorrowDesign(s, prior, SuccessRule(0.1)), y)
        b = posterior_success_prob(ContrastBorrowDesign(s, prior.shift(c), SuccessRule(0.1 + c)), y + c)
        assert a == pytest.approx(b, abs=1e-10)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(-10, 10), st.floats(-10, 10))
    def test_vague_equals_z_test(self, yt, yc):
        prior = MixtureNormal.normal(0.0, 1e6)
        d = ControlBorrowDesign(25, 16, 4.0, prior, prior)
        z = (yt - yc) / math.sqrt(d.se_t ** 2 + d.se_c ** 2)
        if abs(z - Z) > 1e-6:
            assert bool(is_success(d, (yt, yc))) == (z >= Z)

    def test_direction_reflection(self, robust_contrast):
        less = ContrastBorrowDesign(0.3, robust_contrast.reflect(), SuccessRule(0.0, "less"))
        greater = ContrastBorrowDesign(0.3, robust_contrast)
        for y in (-0.6, -0.2, 0.1):
            assert posterior_success_prob(less, y) == pytest.approx(posterior_success_prob(greater, -y), abs=1e-15)


class TestCriticalValue:
    def test_vague_limit(self):
        d = ContrastBorrowDesign(0.25, MixtureNormal.normal(0.0, 1e6), SuccessRule(0.2))
        assert critical_value(d) == pytest.approx(0.2 + Z * 0.25, abs=1e-9)

    def test_boundary_decision(self, lupus_design):
        y = critical_value(lupus_design)
        assert is_success(lupus_design, y)
        assert not is_success(lupus_design, y - 1e-9)

    def test_table3_closure(self, lupus_design):
        y = critical_value(lupus_design)
        assert 1 - norm.cdf(y / S_NEW) == pytest.approx(0.332, abs=1e-9)

    @pytest.mark.parametrize("s", [0.1, 0.2, 0.4, 0.8])
    def test_informative_lowers_boundary(self, s, robust_contrast):
        vague = ContrastBorrowDesign(s, MixtureNormal.normal(0, 100))
        assert critical_value(ContrastBorrowDesign(s, robust_contrast)) < critical_value(vague)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_root_reevaluates(self, seed):
        rng = np.random.default_rng(seed)
        d = ContrastBorrowDesign(float(rng.uniform(0.05, 2)), random_mixture(rng, 3),
                                 SuccessRule(float(rng.normal(0, 0.3)), str(rng.choice(["greater", "less"]))))
        try:
            y = critical_value(d)
        except MonotonicityError:
            return
        assert posterior_success_prob(d, y) == pytest.approx(0.975, abs=1e-8)

    def test_non_half_line_detected(self, robust_contrast):
        # very wide likelihood: the probability clears 0.975 near the informative mean,
        # then drops again as conflict hands the weight to the wide component
        with pytest.raises(MonotonicityError, match="Monte Carlo"):
            critical_value(ContrastBorrowDesign(25.0, robust_contrast))

    def test_control_design_rejected(self, crohns_design):
        with pytest.raises(TypeError):
            critical_value(crohns_design)


class TestCriticalCurve:
    def test_vague_limit(self):
        prior = MixtureNormal.normal(0.0, 1e7)
        d = ControlBorrowDesign(40, 20, 88.0, prior, prior, SuccessRule(0.0, "less"))
        yc = np.array([-100.0, -50.0, 0.0])
        offset = Z * 88.0 * math.sqrt(1 / 40 + 1 / 20)
        np.testing.assert_allclose(critical_curve(d, yc), yc - offset, atol=1e-6)

    def test_roots_reevaluate(self, crohns_design):
        yc = np.linspace(-400, 300, 71)
        yt = critical_curve(crohns_design, yc)
        np.testing.assert_allclose(posterior_success_prob(crohns_design, (yt, yc)), 0.975, atol=1e-10)

    def test_borrowing_relaxes_boundary_near_history(self, crohns_design, vague_c):
        vague = crohns_design.with_prior(vague_c)
        gap_rob = -49.0 - critical_curve(crohns_design, -49.0)
        gap_vag = -49.0 - critical_curve(vague, -49.0)
        assert 0 < gap_rob < gap_vag

    @pytest.mark.parametrize("c", [-30.0, 12.5, 400.0])
    def test_translation(self, crohns_design, c):
        shifted = ControlBorrowDesign(40, 20, 88.0, crohns_design.prior_t.shift(c), crohns_design.prior_c.shift(c),
                                      crohns_design.rule)
        yc = np.array([-120.0, -49.0, 10.0])
        np.testing.assert_allclose(critical_curve(shifted, yc + c), critical_curve(crohns_design, yc) + c, atol=1e-8)

    def test_mixture_treatment_prior(self, robust_map):
        d = ControlBorrowDesign(40, 20, 88.0, robust_map, robust_map, SuccessRule(0.0, "less"))
        yc = np.array([-80.0, -50.0, -20.0])
        yt = critical_curve(d, yc)
        np.testing.assert_allclose(posterior_success_prob(d, (yt, yc)), 0.975, atol=1e-10)

    def test_scalar(self, crohns_design):
        assert isinstance(critical_curve(crohns_design, -50.0), float)
