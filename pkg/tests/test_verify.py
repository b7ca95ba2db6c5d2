"""Tests for the enumeration and Monte Carlo verification oracles."""

import json
import math

import numpy as np
import pytest

from basefuse.allocator import AllocatorConfig
from basefuse.estimator import fused_baseline_value
from basefuse.verify import (
    GRADIENT_BASELINES,
    MCReport,
    check_base_group_size,
    check_gradient_bound,
    bias_decay_slope,
    enumerate_estimator_moments,
    enumerate_false_rejection,
    exact_mean_variance,
    gradient_bound_suite,
    mc_false_rejection,
    mc_fixed_weight_mse,
    mc_regret,
    no_upward_regret_trend,
    oracle_stop,
    simulate_stopping,
    true_risk,
    verification_suite,
)


class TestMCReport:
    def test_exact_requires_zero_se(self):
        with pytest.raises(ValueError):
            MCReport(name="x", estimate=1.0, std_error=0.1, trials=10, exact=True)

    def test_serializable(self):
        r = MCReport(name="x", estimate=1.0, std_error=0.0, trials=10, exact=True)
        json.dumps(r.to_dict())


class TestEnumerateEstimatorMoments:
    def test_deterministic_outcome(self):
        # p_true = 1 pins the mean at 1, so the bias is one term exactly
        bias, mse = enumerate_estimator_moments(1.0, 0.3, 4)
        expected = fused_baseline_value(1.0, 0.3, 4) - 1.0
        assert bias == pytest.approx(expected, abs=1e-15)
        assert mse == pytest.approx(expected**2, abs=1e-15)

    def test_near_prior_case_within_bound(self):
        bias, _ = enumerate_estimator_moments(0.9, 0.8, 4)
        assert abs(bias) <= 0.5

    def test_symmetric_case_zero_bias(self):
        bias, _ = enumerate_estimator_moments(0.5, 0.0, 4)
        assert abs(bias) <= 1e-15

    def test_enumeration_cap(self):
        with pytest.raises(ValueError):
            enumerate_estimator_moments(0.5, 0.0, 20_000)

    def test_bias_bound_on_spot_grid(self):
        for p in (0.0, 0.2, 0.5, 0.8, 1.0):
            for prior_value in (-1.0, -0.4, 0.0, 0.6, 1.0):
                for k in (4, 16, 64):
                    bias, _ = enumerate_estimator_moments(p, prior_value, k)
                    assert abs(bias) <= 1.0 / math.sqrt(k) + 1e-12


class TestBiasDecay:
    def test_slope_at_least_linear(self):
        slope = bias_decay_slope(0.9, 0.0, (16, 32, 64, 128, 256))
        assert slope <= -0.9

    def test_zero_bias_grid_rejected(self):
        # Deterministic success with a matching prior has exactly zero bias
        with pytest.raises(ValueError, match="zero bias"):
            bias_decay_slope(1.0, 1.0, (16, 32))


class TestFalseRejection:
    def test_exact_matches_direct_sum(self):
        # k=4, exact prior at p=0.5: rejection means |v_bar| > 0.5,
        # i.e. all four agree: 2 * (1/16)
        assert enumerate_false_rejection(0.5, 0.0, 4) == pytest.approx(0.125, abs=1e-12)

    @pytest.mark.parametrize("p_true", [0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0])
    def test_mc_consistent_with_enumeration(self, p_true):
        rng = np.random.default_rng(21)
        prior_value = 2 * p_true - 1
        report = mc_false_rejection(p_true, prior_value, 4, 200_000, rng)
        assert report.passed, (
            f"p={p_true}: mc={report.estimate}, exact={report.bound}, se={report.std_error}"
        )


class TestFixedWeightMse:
    def test_prior_only_zero_variance(self):
        rng = np.random.default_rng(2)
        report = mc_fixed_weight_mse(0.3, 0.5, 4, 0.0, 10_000, rng)
        delta_sq = (0.5 - (2 * 0.3 - 1)) ** 2
        assert report.estimate == pytest.approx(delta_sq, abs=1e-12)
        assert report.passed

    def test_empirical_only_matches_exact_variance(self):
        rng = np.random.default_rng(2)
        report = mc_fixed_weight_mse(0.5, 0.0, 4, 1.0, 500_000, rng)
        assert report.bound == pytest.approx(0.25, abs=1e-12)
        assert report.passed

    def test_optimal_weight_beats_endpoints(self):
        p_true, prior_value, k = 0.8, 0.1, 8
        mu_true = 2 * p_true - 1
        delta_sq = (prior_value - mu_true) ** 2
        var = exact_mean_variance(p_true, k)
        w_star = delta_sq / (delta_sq + var)
        mse = lambda w: w * w * var + (1 - w) ** 2 * delta_sq
        assert mse(w_star) <= min(mse(0.0), mse(1.0))


class TestOracleStop:
    def test_zero_bias_stops_at_minimum(self):
        x_star, k_oracle = oracle_stop(0.0, 0.0039, 4)
        assert x_star == -math.inf
        assert k_oracle == 4

    def test_max_budget_constant(self):
        x_star, _ = oracle_stop(math.inf, 0.0039, 4)
        assert x_star == pytest.approx(16.013, abs=1e-3)

    def test_derived_boundary_and_scan(self):
        x_star, k_oracle = oracle_stop(0.25, 0.0039, 4)
        assert x_star == pytest.approx(12.013, abs=1e-3)
        # brute-scan optimum beats its neighbors
        for k in (k_oracle - 1, k_oracle + 1):
            if k >= 4:
                assert true_risk(k_oracle, 0.25, 0.0039) <= true_risk(k, 0.25, 0.0039)


class TestSimulateStopping:
    def test_accepted_prior_stops_cold(self):
        rng = np.random.default_rng(0)
        k_star = simulate_stopping(1.0, 1.0, AllocatorConfig(), 1000, rng)
        assert np.all(k_star == 4)

    def test_severe_conflict_runs_to_cap(self):
        rng = np.random.default_rng(0)
        k_star = simulate_stopping(0.0, 0.8, AllocatorConfig(), 1000, rng)
        assert np.all(k_star == 16)

    def test_uncapped_concentration_near_boundary(self):
        # With the cap lifted, the stop point concentrates near the
        # continuous boundary (15.7 for this bias and cost).
        rng = np.random.default_rng(0)
        cfg = AllocatorConfig(budget_cap=100)
        k_star = simulate_stopping(0.0, 0.8, cfg, 1000, rng)
        x_star, _ = oracle_stop(3.24, cfg.cost, cfg.k_min)
        mode = int(np.bincount(k_star).argmax())
        assert abs(mode - math.ceil(x_star)) <= 1

    def test_range_respected(self):
        rng = np.random.default_rng(0)
        cfg = AllocatorConfig()
        for p_true, prior_value in ((0.2, 0.9), (0.6, -0.3), (0.5, 0.0)):
            k_star = simulate_stopping(p_true, prior_value, cfg, 5000, rng)
            assert k_star.min() >= cfg.k_min
            assert k_star.max() <= cfg.budget_cap


class TestMcRegret:
    def test_exact_prior_zero_regret(self):
        rng = np.random.default_rng(0)
        report = mc_regret(1.0, 1.0, AllocatorConfig(), 2000, rng)
        assert report.estimate == pytest.approx(0.0, abs=1e-12)

    def test_report_fields(self):
        rng = np.random.default_rng(0)
        report = mc_regret(0.0, 0.8, AllocatorConfig(), 2000, rng)
        assert report.trials == 2000
        assert "ratio_to_cost" in report.details
        assert report.details["bias_sq_true"] == pytest.approx(3.24, abs=1e-12)


class TestRegretTrend:
    def test_noise_level_series_passes(self):
        costs = [0.02, 0.01, 0.0039, 0.002, 0.001]
        assert no_upward_regret_trend(costs, [0.0] * 5, [1e-6] * 5)
        assert no_upward_regret_trend(costs, [1e-15, -1e-15, 0, 2e-14, 1e-16], [1e-8] * 5)

    def test_bounded_ratios_pass(self):
        costs = [0.02, 0.01, 0.0039, 0.002, 0.001]
        assert no_upward_regret_trend(costs, [0.5, 0.7, 0.4, 0.6, 0.55], [1e-3] * 5)

    def test_strong_growth_toward_small_cost_fails(self):
        costs = [0.02, 0.01, 0.0039, 0.002, 0.001]
        assert not no_upward_regret_trend(costs, [0.1, 0.5, 2.0, 10.0, 50.0], [1e-3] * 5)


class TestGradientBound:
    def test_oracle_baseline_tight_case(self):
        rng = np.random.default_rng(4)
        report = check_gradient_bound(0.6, "oracle", 200_000, rng)
        assert report.status == "pass"
        assert report.mse_b == 0.0
        assert report.bias_b == pytest.approx(0.0, abs=1e-12)
        assert report.bound_value == pytest.approx(report.var_oracle, abs=1e-12)

    def test_exact_constant_prior_matches_oracle(self):
        rng = np.random.default_rng(4)
        oracle = check_gradient_bound(0.6, "oracle", 100_000, np.random.default_rng(4))
        prior = check_gradient_bound(0.6, "prior", 100_000, np.random.default_rng(4))
        assert prior.var_trace == pytest.approx(oracle.var_trace, rel=1e-9)

    def test_fused_beats_group_mean_at_matched_compute(self):
        grp = check_gradient_bound(0.6, "group_mean", 400_000, np.random.default_rng(4), group_size=4)
        fused = check_gradient_bound(0.6, "fused", 400_000, np.random.default_rng(4), group_size=4)
        assert fused.var_trace < grp.var_trace

    @pytest.mark.parametrize("baseline", GRADIENT_BASELINES)
    def test_bound_holds_for_every_baseline(self, baseline):
        rng = np.random.default_rng(8)
        report = check_gradient_bound(0.45, baseline, 150_000, rng, group_size=4)
        assert report.status == "pass", (
            f"{baseline}: var={report.var_trace}, bound={report.bound_value}, "
            f"slack={report.slack}, se={report.std_error}"
        )

    def test_invalid_inputs_rejected(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError, match="unknown baseline"):
            check_gradient_bound(0.5, "kalman", 1000, rng)
        with pytest.raises(ValueError, match="theta"):
            check_gradient_bound(1.0, "oracle", 1000, rng)

    def test_underpowered_run_flagged_inconclusive(self):
        rng = np.random.default_rng(12345)
        report = check_gradient_bound(0.6, "group_mean", 100, rng)
        assert report.status == "inconclusive"
        assert report.std_error > 0.1 * report.bound_value

    def test_report_serializable(self):
        rng = np.random.default_rng(0)
        report = check_gradient_bound(0.5, "oracle", 10_000, rng)
        json.dumps(report.to_dict())


class TestBaseGroupSize:
    def test_spot_values(self):
        rows = {r.k: r for r in check_base_group_size([2, 4, 16])}
        assert rows[2].gap == 1.0
        assert rows[2].threshold == pytest.approx(0.7071, abs=1e-4)
        assert rows[2].robust is False
        assert rows[4].gap == 0.5
        assert rows[4].threshold == 0.5
        assert rows[4].robust is True
        assert rows[16].gap == 0.125
        assert rows[16].threshold == 0.25
        assert rows[16].robust is True

    def test_robust_iff_at_least_four(self):
        for row in check_base_group_size(range(1, 65)):
            assert row.robust == (row.k >= 4), f"k={row.k}"

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            check_base_group_size([0])
        with pytest.raises(ValueError):
            check_base_group_size([65])


class TestSuites:
    def test_verification_suite_all_checks_pass(self):
        reports = verification_suite(seed=1, trials=20_000, episodes=4_000)
        failed = [r.name for r in reports if r.passed is False]
        assert not failed, f"failing checks: {failed}"
        names = {r.name for r in reports}
        assert "bias_bound_grid" in names
        assert "budget_boundary" in names
        assert any(n.startswith("regret") for n in names)

    def test_gradient_suite_passes(self):
        reports = gradient_bound_suite(seed=2, trials=60_000)
        assert all(r.status == "pass" for r in reports), [
            (r.baseline, r.theta, r.status) for r in reports
        ]
