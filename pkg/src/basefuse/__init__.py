"""Adaptive prior-fused advantage baselines with rollout budget allocation.

Submodules:
    estimator   shrinkage fusion of a prior with sparse rollout means
    allocator   per-prompt sequential stopping rule
    scheduler   batch orchestration: cold start, halt rule, padding
    simulator   Bernoulli reward environment and scenario prior oracle
    verify      enumeration and Monte Carlo oracles for the theory checks
    trainer     toy policy-gradient loop with the clipped surrogate
    config      experiment config schema and loading
    cli         command-line entry point
"""

from .allocator import AllocationDecision, AllocatorConfig, decide, should_stop, target_budget
from .estimator import (
    FusionResult,
    PriorEstimate,
    RolloutGroup,
    advantages,
    empirical_bias,
    empirical_mean,
    fuse,
    fuse_baseline,
    fused_std,
    noise_variance_bound,
    optimal_weight,
    shrinkage_weight,
    theoretical_mse,
)
from .scheduler import (
    BatchState,
    PromptResult,
    SchedulerConfig,
    SupportBuffer,
    cold_start,
    finalize,
    run_batch,
    run_round,
)
from .simulator import (
    BernoulliRolloutEnv,
    PriorScenario,
    PromptSpec,
    ScenarioPriorOracle,
    prior_predict,
    sample_rollouts,
)

__all__ = [
    "AllocationDecision",
    "AllocatorConfig",
    "BatchState",
    "BernoulliRolloutEnv",
    "FusionResult",
    "PriorEstimate",
    "PriorScenario",
    "PromptResult",
    "PromptSpec",
    "RolloutGroup",
    "ScenarioPriorOracle",
    "SchedulerConfig",
    "SupportBuffer",
    "advantages",
    "cold_start",
    "decide",
    "empirical_bias",
    "empirical_mean",
    "finalize",
    "fuse",
    "fuse_baseline",
    "fused_std",
    "noise_variance_bound",
    "optimal_weight",
    "prior_predict",
    "run_batch",
    "run_round",
    "sample_rollouts",
    "shrinkage_weight",
    "should_stop",
    "target_budget",
    "theoretical_mse",
]

__version__ = "0.1.0"
