"""Per-prompt sequential stopping logic for rollout budget allocation.

After k rollouts the empirical estimation risk is modeled as

    mse(k) = bias_sq / (k * bias_sq + 1)        (plug-in MSE of the fusion)
    risk(k) = mse(k) + cost * k

One-step-look-ahead: sampling continues while the guaranteed lower bound on
the one-step MSE drop exceeds the marginal cost. Equating the bound to the
cost yields the continuous boundary

    k_target = 1 / sqrt(cost) - 1 / bias_sq

and the stopping step is the first k >= k_min with k >= k_target. A zero
bias estimate (prior accepted) makes the boundary -inf, so stopping is
immediate at the cold-start size. The leading term 1/sqrt(cost) caps the
budget; the config enforces it as a hard ceiling.

Decision functions are pure; per-prompt state lives in the caller.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .estimator import PriorEstimate, RolloutGroup, empirical_bias

# Base group sizes below 4 break the deviation test in the +-1 reward space:
# the lattice gap 2/k between adjacent means exceeds the test radius
# 1/sqrt(k), so single-rollout noise forces false rejections of the prior.
MIN_BASE_GROUP = 4


@dataclass(frozen=True)
class AllocatorConfig:
    """Cost and group-size parameters for sequential allocation.

    Defaults mirror the deployed constants: cost 0.0039 per rollout gives a
    maximum budget 1/sqrt(cost) of about 16, cold start at 4, and 2 extra
    rollouts per continuation.
    """

    cost: float = 0.0039
    k_min: int = 4
    k_init: int = 4
    increment: int = 2
    budget_cap: int = 16

    def __post_init__(self) -> None:
        if self.cost <= 0:
            raise ValueError(f"cost must be > 0, got {self.cost}")
        if self.k_min < MIN_BASE_GROUP:
            raise ValueError(f"k_min must be >= {MIN_BASE_GROUP}, got {self.k_min}")
        if self.k_init < self.k_min:
            raise ValueError(f"k_init must be >= k_min, got {self.k_init} < {self.k_min}")
        if self.increment < 1:
            raise ValueError(f"increment must be >= 1, got {self.increment}")
        if self.budget_cap < self.k_init:
            raise ValueError(
                f"budget_cap must be >= k_init, got {self.budget_cap} < {self.k_init}"
            )

    @classmethod
    def for_cost(cls, cost: float, **overrides) -> "AllocatorConfig":
        """Config with the budget cap tied to the cost: round(1/sqrt(cost))."""
        cap = max(MIN_BASE_GROUP, round(1.0 / math.sqrt(cost)))
        return cls(cost=cost, budget_cap=overrides.pop("budget_cap", cap), **overrides)


@dataclass(frozen=True)
class AllocationDecision:
    """Outcome of one stopping-rule evaluation.

    stop is True iff the boundary condition holds or the budget cap is hit;
    otherwise n_more carries the configured increment. k_target is the
    real-valued boundary (-inf when bias_sq is 0) and bias_sq the estimate
    recomputed at decision time.
    """

    stop: bool
    n_more: int
    k_target: float
    bias_sq: float


def empirical_mse(k: int, bias_sq: float) -> float:
    """Plug-in estimation risk bias_sq / (k * bias_sq + 1)."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if bias_sq < 0:
        raise ValueError(f"bias_sq must be >= 0, got {bias_sq}")
    return bias_sq / (k * bias_sq + 1.0)


def risk(k: int, bias_sq: float, cost: float) -> float:
    """Total risk: estimation MSE plus cumulative rollout cost."""
    if cost < 0:
        raise ValueError(f"cost must be >= 0, got {cost}")
    return empirical_mse(k, bias_sq) + cost * k


def marginal_return_lower_bound(k: int, bias_sq: float) -> float:
    """Guaranteed lower bound on the one-step MSE drop mse(k) - mse(k+1).

    Equals bias_sq^2 / ((k+1) * bias_sq + 1)^2, strictly below the exact
    drop whenever bias_sq > 0.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if bias_sq < 0:
        raise ValueError(f"bias_sq must be >= 0, got {bias_sq}")
    denom = (k + 1) * bias_sq + 1.0
    return bias_sq * bias_sq / (denom * denom)


def target_budget(bias_sq: float, cost: float) -> float:
    """Continuous stopping boundary 1/sqrt(cost) - 1/bias_sq.

    bias_sq = 0 maps to -inf: the boundary is always satisfied, so stopping
    is immediate once k_min is reached.
    """
    if cost <= 0:
        raise ValueError(f"cost must be > 0, got {cost}")
    if bias_sq < 0:
        raise ValueError(f"bias_sq must be >= 0, got {bias_sq}")
    if bias_sq == 0:
        return -math.inf
    return 1.0 / math.sqrt(cost) - 1.0 / bias_sq


def should_stop(k: int, bias_sq: float, config: AllocatorConfig) -> bool:
    """First-crossing test: k >= k_min and k >= boundary, or cap reached.

    The comparison is non-strict against the real-valued boundary; a tie
    stops.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k >= config.budget_cap:
        return True
    return k >= config.k_min and k >= target_budget(bias_sq, config.cost)


def decide(
    group: RolloutGroup, prior: PriorEstimate, config: AllocatorConfig
) -> AllocationDecision:
    """Evaluate the stopping rule on a group's current statistics.

    The bias estimate is recomputed from the full updated group each call;
    no smoothing across rounds.
    """
    if group.k < config.k_init:
        raise ValueError(
            f"decide requires at least k_init={config.k_init} observations, got {group.k}"
        )
    bias_sq = empirical_bias(group.v_bar, prior.value, group.k)
    stop = should_stop(group.k, bias_sq, config)
    return AllocationDecision(
        stop=stop,
        n_more=0 if stop else config.increment,
        k_target=target_budget(bias_sq, config.cost),
        bias_sq=bias_sq,
    )
