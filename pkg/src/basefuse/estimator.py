"""Shrinkage fusion of a prior value prediction with sparse rollout means.

Rewards are binary, r in {-1, +1}. For a group of k rollouts with empirical
mean v_bar and a prior value in [-1, 1], the fused baseline is the convex
combination

    baseline = weight * v_bar + (1 - weight) * prior_value

where the weight is bias_sq / (bias_sq + 1/k) and bias_sq is the
positive-part estimate max(0, (v_bar - prior_value)^2 - 1/k) of the prior's
squared systematic error. The truncation acts as a hypothesis test against
sampling noise: 1/k is the maximum-entropy variance bound for the mean of k
binary rewards, so any squared deviation within 1/k is attributed to noise
and the prior is trusted fully (weight 0). Larger deviations shift weight
toward the empirical mean.

Advantages are standardized by the intrinsic std sqrt(1 - baseline^2) of a
binary reward with that mean, floored at STD_FLOOR to keep them finite when
the baseline saturates at +-1.

All operations are pure functions; the containers are frozen dataclasses.
Safe for concurrent use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

# Lower clamp for the fused std. Keeps advantages finite at baseline = +-1;
# callers that clip via a surrogate objective bound the resulting magnitudes.
STD_FLOOR = 1e-6


def _validate_rewards(rewards: Sequence[int]) -> tuple[int, ...]:
    if len(rewards) == 0:
        raise ValueError("no observations")
    out = []
    for r in rewards:
        v = int(r)
        if v not in (-1, 1):
            raise ValueError(f"rewards must be -1 or +1, got {r!r}")
        out.append(v)
    return tuple(out)


@dataclass(frozen=True)
class RolloutGroup:
    """A prompt's accumulated binary rewards.

    Invariants: k = len(rewards) >= 1; every reward is -1 or +1; v_bar is
    the exact arithmetic mean, which lives on the lattice {-1 + 2j/k}.
    """

    prompt_id: str
    rewards: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "rewards", _validate_rewards(self.rewards))

    @property
    def k(self) -> int:
        return len(self.rewards)

    @property
    def v_bar(self) -> float:
        return sum(self.rewards) / len(self.rewards)

    def extended(self, new_rewards: Sequence[int]) -> "RolloutGroup":
        """New group with extra observations appended (order preserved)."""
        return RolloutGroup(self.prompt_id, self.rewards + _validate_rewards(new_rewards))


@dataclass(frozen=True)
class PriorEstimate:
    """A prior prediction for one prompt, on both probability and reward scales.

    success_prob is in [0, 1]; value = 2 * success_prob - 1 is the same
    prediction on the reward scale, matching E[r] = 2 * P(success) - 1.
    """

    success_prob: float
    value: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.success_prob <= 1.0:
            raise ValueError(f"success_prob must be in [0, 1], got {self.success_prob}")
        if self.value != 2.0 * self.success_prob - 1.0:
            raise ValueError("value must equal 2 * success_prob - 1 exactly")

    @classmethod
    def from_success_prob(cls, p: float) -> "PriorEstimate":
        return cls(success_prob=p, value=2.0 * p - 1.0)

    @classmethod
    def from_value(cls, value: float) -> "PriorEstimate":
        if not -1.0 <= value <= 1.0:
            raise ValueError(f"prior value must be in [-1, 1], got {value}")
        p = (value + 1.0) / 2.0
        return cls(success_prob=p, value=2.0 * p - 1.0)


@dataclass(frozen=True)
class FusionResult:
    """All fusion quantities for one prompt at one instant.

    noise_var = 1/k; bias_sq >= 0 (0 exactly on the acceptance region);
    weight in [0, 1); baseline lies between v_bar and the prior value;
    std in (0, 1].
    """

    noise_var: float
    bias_sq: float
    weight: float
    baseline: float
    std: float


def empirical_mean(rewards: Sequence[int]) -> float:
    """Exact arithmetic mean of a nonempty +-1 reward sequence."""
    checked = _validate_rewards(rewards)
    return sum(checked) / len(checked)


def noise_variance_bound(k: int) -> float:
    """Guaranteed variance bound 1/k for the mean of k binary rewards."""
    if k < 1:
        raise ValueError(f"group size must be >= 1, got {k}")
    return 1.0 / k


def empirical_bias(v_bar: float, prior_value: float, k: int) -> float:
    """Positive-part estimate of the prior's squared bias.

    Returns max(0, (v_bar - prior_value)^2 - 1/k). Zero exactly when the
    squared deviation fits within the noise bound 1/k (prior accepted).
    """
    if not -1.0 <= v_bar <= 1.0:
        raise ValueError(f"v_bar must be in [-1, 1], got {v_bar}")
    if not -1.0 <= prior_value <= 1.0:
        raise ValueError(f"prior_value must be in [-1, 1], got {prior_value}")
    if k < 1:
        raise ValueError(f"group size must be >= 1, got {k}")
    return max(0.0, (v_bar - prior_value) ** 2 - 1.0 / k)


def shrinkage_weight(bias_sq: float, noise_var: float) -> float:
    """Fusion weight bias_sq / (bias_sq + noise_var) in [0, 1)."""
    if bias_sq < 0:
        raise ValueError(f"bias_sq must be >= 0, got {bias_sq}")
    if noise_var <= 0:
        raise ValueError(f"noise_var must be > 0, got {noise_var}")
    if math.isinf(bias_sq):
        return 1.0
    return bias_sq / (bias_sq + noise_var)


def fuse_baseline(v_bar: float, prior_value: float, weight: float) -> float:
    """Convex combination weight * v_bar + (1 - weight) * prior_value."""
    if not 0.0 <= weight <= 1.0:
        raise ValueError(f"weight must be in [0, 1], got {weight}")
    return weight * v_bar + (1.0 - weight) * prior_value


def fused_std(baseline: float, floor: float = STD_FLOOR) -> float:
    """Intrinsic std sqrt(1 - baseline^2) of a binary reward, floored."""
    if not -1.0 <= baseline <= 1.0:
        raise ValueError(f"baseline must be in [-1, 1], got {baseline}")
    return math.sqrt(max(floor * floor, 1.0 - baseline * baseline))


def fused_baseline_value(v_bar: float, prior_value: float, k: int) -> float:
    """Full fusion chain from raw statistics: bias test, weight, baseline."""
    bias_sq = empirical_bias(v_bar, prior_value, k)
    weight = shrinkage_weight(bias_sq, noise_variance_bound(k))
    return fuse_baseline(v_bar, prior_value, weight)


def fuse(group: RolloutGroup, prior: PriorEstimate) -> FusionResult:
    """Compute the complete fusion for a reward group and a prior."""
    noise_var = noise_variance_bound(group.k)
    bias_sq = empirical_bias(group.v_bar, prior.value, group.k)
    weight = shrinkage_weight(bias_sq, noise_var)
    baseline = fuse_baseline(group.v_bar, prior.value, weight)
    return FusionResult(
        noise_var=noise_var,
        bias_sq=bias_sq,
        weight=weight,
        baseline=baseline,
        std=fused_std(baseline),
    )


def advantages(group: RolloutGroup, fusion: FusionResult) -> list[float]:
    """Standardized advantages (r_i - baseline) / std, order-preserving."""
    return [(r - fusion.baseline) / fusion.std for r in group.rewards]


def group_sample_std(rewards: Sequence[int]) -> float:
    """Population std of the group's rewards.

    Diagnostic only: advantages use the intrinsic fused std, not this.
    """
    checked = _validate_rewards(rewards)
    mean = sum(checked) / len(checked)
    return math.sqrt(sum((r - mean) ** 2 for r in checked) / len(checked))


def theoretical_mse(weight: float, noise_var: float, bias_sq: float) -> float:
    """MSE decomposition w^2 * noise_var + (1 - w)^2 * bias_sq."""
    if not 0.0 <= weight <= 1.0:
        raise ValueError(f"weight must be in [0, 1], got {weight}")
    if noise_var < 0 or bias_sq < 0:
        raise ValueError("noise_var and bias_sq must be >= 0")
    return weight * weight * noise_var + (1.0 - weight) ** 2 * bias_sq


def optimal_weight(noise_var: float, bias_sq: float) -> float:
    """Unique minimizer bias_sq / (bias_sq + noise_var) of theoretical_mse."""
    if noise_var < 0 or bias_sq < 0:
        raise ValueError("noise_var and bias_sq must be >= 0")
    if noise_var + bias_sq == 0:
        raise ValueError("degenerate: noise_var and bias_sq are both zero")
    return bias_sq / (bias_sq + noise_var)
