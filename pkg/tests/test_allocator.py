"""Tests for the sequential stopping rule and its risk algebra."""

import math

import numpy as np
import pytest

from basefuse.allocator import (
    AllocationDecision,
    AllocatorConfig,
    decide,
    empirical_mse,
    marginal_return_lower_bound,
    risk,
    should_stop,
    target_budget,
)
from basefuse.estimator import PriorEstimate, RolloutGroup


class TestAllocatorConfig:
    def test_defaults_match_deployed_constants(self):
        cfg = AllocatorConfig()
        assert cfg.cost == 0.0039
        assert cfg.k_min == 4
        assert cfg.k_init == 4
        assert cfg.increment == 2
        assert cfg.budget_cap == 16

    def test_base_group_floor_enforced(self):
        with pytest.raises(ValueError, match="k_min"):
            AllocatorConfig(k_min=3)

    def test_k_init_below_k_min_rejected(self):
        with pytest.raises(ValueError, match="k_init"):
            AllocatorConfig(k_min=5, k_init=4)

    def test_cap_below_init_rejected(self):
        with pytest.raises(ValueError, match="budget_cap"):
            AllocatorConfig(budget_cap=3)

    def test_for_cost_ties_cap_to_boundary(self):
        assert AllocatorConfig.for_cost(0.0039).budget_cap == 16
        assert AllocatorConfig.for_cost(0.01).budget_cap == 10
        assert AllocatorConfig.for_cost(0.001).budget_cap == 32


class TestEmpiricalMse:
    def test_zero_bias(self):
        assert empirical_mse(4, 0.0) == 0.0

    def test_derived(self):
        assert empirical_mse(4, 1.0) == pytest.approx(0.2, abs=1e-15)

    def test_decreasing_in_k_and_vanishing(self):
        values = [empirical_mse(k, 0.7) for k in range(1, 200)]
        assert all(b < a for a, b in zip(values, values[1:]))
        assert empirical_mse(10**9, 0.7) < 1e-8


class TestRisk:
    def test_derived(self):
        assert risk(4, 1.0, 0.0039) == pytest.approx(0.2156, abs=1e-12)

    def test_pure_cost(self):
        assert risk(4, 0.0, 0.0039) == pytest.approx(0.0156, abs=1e-15)

    def test_free_rollouts(self):
        assert risk(7, 0.3, 0.0) == empirical_mse(7, 0.3)


class TestMarginalReturnLowerBound:
    def test_zero_bias(self):
        assert marginal_return_lower_bound(4, 0.0) == 0.0

    def test_derived(self):
        assert marginal_return_lower_bound(4, 1.0) == pytest.approx(1 / 36, abs=1e-15)

    def test_strictly_below_exact_drop(self):
        for k in range(1, 65):
            for bias_sq in np.logspace(-3, math.log10(4.0), 30):
                drop = empirical_mse(k, float(bias_sq)) - empirical_mse(k + 1, float(bias_sq))
                lb = marginal_return_lower_bound(k, float(bias_sq))
                assert lb < drop, f"k={k}, bias_sq={bias_sq}: lb={lb} >= drop={drop}"


class TestTargetBudget:
    def test_max_budget_constant(self):
        assert target_budget(math.inf, 0.0039) == pytest.approx(16.013, abs=1e-3)

    def test_zero_bias_sentinel(self):
        assert target_budget(0.0, 0.0039) == -math.inf

    def test_derived(self):
        assert target_budget(0.25, 0.0039) == pytest.approx(12.013, abs=1e-3)

    def test_monotone_in_bias(self):
        grid = np.linspace(0.0, 5.0, 100)
        targets = [target_budget(float(b), 0.0039) for b in grid]
        assert all(b >= a for a, b in zip(targets, targets[1:]))

    def test_monotone_in_inverse_sqrt_cost(self):
        costs = [0.02, 0.01, 0.0039, 0.002, 0.001]
        targets = [target_budget(0.5, c) for c in costs]
        assert all(b > a for a, b in zip(targets, targets[1:]))

    def test_break_even_consistency(self):
        # Equating the marginal-return envelope to the cost and solving the
        # resulting linear equation recovers the continuous boundary.
        rng = np.random.default_rng(13)
        for _ in range(200):
            bias_sq = float(rng.uniform(1e-3, 4.0))
            cost = float(rng.uniform(1e-4, 0.05))
            solved_k_plus_1 = (bias_sq / math.sqrt(cost) - 1.0) / bias_sq
            assert abs(solved_k_plus_1 - target_budget(bias_sq, cost)) < 1e-9


class TestShouldStop:
    def test_cold_start_accepts(self):
        assert should_stop(4, 0.0, AllocatorConfig()) is True

    def test_continues_below_boundary(self):
        assert should_stop(4, 0.25, AllocatorConfig()) is False

    def test_cap_always_stops(self):
        cfg = AllocatorConfig()
        for bias_sq in (0.0, 0.25, 1.0, 100.0):
            assert should_stop(16, bias_sq, cfg) is True
            assert should_stop(20, bias_sq, cfg) is True

    def test_tie_at_boundary_stops(self):
        # cost 1/64 gives boundary 8 - 1/bias_sq exactly; bias_sq 0.25 puts
        # the boundary at 4.0, so k=4 is a tie and must stop.
        cfg = AllocatorConfig(cost=1 / 64, budget_cap=8)
        assert target_budget(0.25, cfg.cost) == 4.0
        assert should_stop(4, 0.25, cfg) is True

    def test_below_k_min_never_stops_before_cap(self):
        cfg = AllocatorConfig(k_min=6, k_init=6, budget_cap=16)
        assert should_stop(5, 0.0, cfg) is False


class TestDecide:
    def _group(self, rewards):
        return RolloutGroup("x", tuple(rewards))

    def test_accept_prior_stops(self):
        d = decide(self._group([1, 1, 1, 1]), PriorEstimate.from_value(0.8), AllocatorConfig())
        assert d.stop is True
        assert d.n_more == 0
        assert d.bias_sq == 0.0

    def test_conflict_requests_increment(self):
        d = decide(self._group([-1, -1, -1, -1]), PriorEstimate.from_value(0.8), AllocatorConfig())
        assert d == AllocationDecision(
            stop=False, n_more=2, k_target=d.k_target, bias_sq=d.bias_sq
        )
        assert d.bias_sq == pytest.approx(2.99, abs=1e-12)
        assert d.k_target == pytest.approx(15.678, abs=1e-3)

    def test_cap_stops_regardless(self):
        rewards = [-1] * 16
        d = decide(self._group(rewards), PriorEstimate.from_value(0.8), AllocatorConfig())
        assert d.stop is True

    def test_requires_cold_start_size(self):
        with pytest.raises(ValueError, match="k_init"):
            decide(self._group([1, 1]), PriorEstimate.from_value(0.0), AllocatorConfig())


class TestStoppingGuarantee:
    """Any reward sequence reaches Stop within the round budget."""

    def test_always_stops_within_bound(self):
        cfg = AllocatorConfig()
        max_rounds = math.ceil((cfg.budget_cap - cfg.k_init) / cfg.increment)
        rng = np.random.default_rng(23)
        for trial in range(300):
            p = float(rng.uniform(0, 1))
            prior = PriorEstimate.from_value(float(rng.uniform(-1, 1)))
            rewards = [1 if rng.random() < p else -1 for _ in range(cfg.k_init)]
            rounds = 0
            while True:
                d = decide(RolloutGroup("x", tuple(rewards)), prior, cfg)
                if d.stop:
                    break
                rounds += 1
                assert rounds <= max_rounds, f"trial {trial}: no stop after {rounds} rounds"
                take = min(d.n_more, cfg.budget_cap - len(rewards))
                rewards.extend(1 if rng.random() < p else -1 for _ in range(take))
            assert cfg.k_init <= len(rewards) <= cfg.budget_cap
