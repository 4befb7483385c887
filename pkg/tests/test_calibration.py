import warnings

import numpy as np
import pytest

from borrowoc import (
    CalibrationRequest,
    ContrastBorrowDesign,
    DesignPrior,
    MixtureNormal,
    NormalComponent,
    SuccessRule,
    calibrate,
    conditional_power,
    max_weight_for_bound,
    solve_s_new,
    upper_bound_fp,
)
from borrowoc.calibration import build_design, metric_value, mix_weight
from conftest import LOG_OR, S_NEW

ROBUST = NormalComponent(0.0, 2.87)
W_GRID = (0.0, 1.0, 11)


@pytest.fixture(scope="module")
def truncated_adult(adult):
    return DesignPrior.truncated(adult, 0.0, keep="below")


def request_for(lupus_design, adult, design_prior, target, metric="average_type1_null", grid=None):
    return CalibrationRequest(lupus_design, metric, design_prior, target, grid or {"robust_weight": W_GRID},
                              LOG_OR, informative=adult, robust=ROBUST)


class TestMixWeight:
    def test_endpoints(self, adult):
        assert mix_weight(adult, ROBUST, 1.0) is adult
        assert mix_weight(adult, ROBUST, 0.0).n_components == 1

    def test_case2_prior(self, adult, robust_contrast):
        m = mix_weight(adult, ROBUST, 0.7)
        np.testing.assert_allclose(m.weights, robust_contrast.weights)
        np.testing.assert_allclose(m.sds, robust_contrast.sds)

    def test_domain(self, adult):
        with pytest.raises(ValueError):
            mix_weight(adult, ROBUST, 1.2)


class TestCalibrate:
    def test_little_borrowing(self, lupus_design, adult):
        dp = DesignPrior.from_mixture(adult)
        res = calibrate(request_for(lupus_design, adult, dp, 0.025))
        ws = [p.params["robust_weight"] for p in res.frontier]
        assert ws and max(ws) <= 0.1

    def test_frontier_sorted_and_admissible(self, lupus_design, adult, robust_contrast):
        dp = DesignPrior.from_mixture(robust_contrast)
        res = calibrate(request_for(lupus_design, adult, dp, 0.05, metric="upper_bound_fp"))
        assert all(p.metric <= 0.05 for p in res.frontier)
        powers = [p.power for p in res.frontier]
        assert powers == sorted(powers, reverse=True)
        assert len(res.evaluated) == 11

    def test_empty_frontier(self, lupus_design, adult):
        dp = DesignPrior.from_mixture(adult)
        res = calibrate(request_for(lupus_design, adult, dp, 1e-6))
        assert res.frontier == []
        assert res.min_metric == pytest.approx(min(p.metric for p in res.evaluated))
        assert res.min_metric > 1e-6

    def test_vague_end_admissible(self, crohns_design, vague_c, robust_map):
        req = CalibrationRequest(crohns_design, "average_type1", DesignPrior.from_mixture(robust_map), 0.03,
                                 {"robust_weight": (0.0, 0.0, 1)}, (-50.0, -120.0),
                                 informative=robust_map, robust=NormalComponent(-50.0, 8800.0))
        res = calibrate(req)
        assert len(res.frontier) == 1 and res.frontier[0].metric == pytest.approx(0.025, abs=2e-3)

    def test_singleton_equals_direct(self, lupus_design, adult, truncated_adult):
        res = calibrate(request_for(lupus_design, adult, truncated_adult, 0.5, metric="average_type1",
                                    grid={"robust_weight": (0.7, 0.7, 1), "s_new_scale": (1.0, 1.0, 1)}))
        d = build_design(lupus_design, {"robust_weight": 0.7}, adult, ROBUST)
        assert res.evaluated[0].metric == metric_value(d, "average_type1", truncated_adult)
        assert res.evaluated[0].power == conditional_power(d, LOG_OR)

    def test_sample_size_grid(self, crohns_design, map_prior):
        req = CalibrationRequest(crohns_design, "average_type1", DesignPrior.from_mixture(map_prior), 0.05,
                                 {"n_c": (10, 30, 3), "n_t": (40, 40, 1)}, (-50.0, -120.0))
        res = calibrate(req)
        assert [p.params["n_c"] for p in res.evaluated] == [10, 20, 30]
        sizes = [p.total_n(crohns_design) for p in res.evaluated]
        assert sizes == [50, 60, 70]

    @pytest.mark.parametrize("kw", [dict(target=0.0), dict(target=1.0), dict(metric="power"),
                                    dict(grid={}), dict(grid={"alpha": (0, 1, 3)}),
                                    dict(grid={"n_t": (10, 20, 3)}), dict(grid={"robust_weight": (1, 0, 3)})])
    def test_request_validation(self, lupus_design, adult, kw):
        base = dict(base_design=lupus_design, metric="average_type1", design_prior=DesignPrior.from_mixture(adult),
                    target=0.05, grid={"robust_weight": W_GRID}, alternative=LOG_OR, informative=adult,
                    robust=ROBUST)
        base.update(kw)
        with pytest.raises(ValueError):
            CalibrationRequest(**base)


class TestMaxWeight:
    def test_vacuous_target(self, lupus_design, adult, robust_contrast):
        w = max_weight_for_bound(lupus_design, DesignPrior.from_mixture(robust_contrast), 1.0,
                                 informative=adult, robust=ROBUST)
        assert w == 1.0

    def test_case2(self, lupus_design, adult, robust_contrast):
        dp = DesignPrior.from_mixture(robust_contrast)
        w = max_weight_for_bound(lupus_design, dp, 0.05, informative=adult, robust=ROBUST)
        assert w >= 0.7
        d = lupus_design.with_prior(mix_weight(adult, ROBUST, w))
        assert upper_bound_fp(d, robust_contrast).value == pytest.approx(0.05, abs=1e-3)

    def test_infeasible_warns(self, lupus_design, adult, robust_contrast):
        dp = DesignPrior.from_mixture(robust_contrast)
        with pytest.warns(RuntimeWarning, match="no weight"):
            assert max_weight_for_bound(lupus_design, dp, 1e-4, informative=adult, robust=ROBUST) == 0.0


class TestSolveSNew:
    def test_upper_root(self, robust_contrast):
        s = solve_s_new(robust_contrast, 0.332)
        assert s == pytest.approx(S_NEW, rel=1e-9)
        cp0 = conditional_power(ContrastBorrowDesign(s, robust_contrast), 0.0)
        assert cp0 == pytest.approx(0.332, abs=1e-12)

    def test_two_branches(self, robust_contrast):
        lo = solve_s_new(robust_contrast, 0.332, branch="lower")
        assert lo < S_NEW
        assert conditional_power(ContrastBorrowDesign(lo, robust_contrast), 0.0) == pytest.approx(0.332, abs=1e-12)

    def test_vague_unattainable(self):
        with pytest.raises(ValueError, match="not attained"):
            solve_s_new(MixtureNormal.normal(0, 100), 0.1)

    def test_branch_checked(self, robust_contrast):
        with pytest.raises(ValueError):
            solve_s_new(robust_contrast, 0.332, branch="middle")
