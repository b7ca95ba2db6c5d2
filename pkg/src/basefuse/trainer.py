"""Desk-scale policy-gradient loop on a bank of independent binary tasks.

Each prompt in the bank has one logit; the policy answers it correctly with
probability sigmoid(logit), earning reward +1, else -1. Score functions are
closed-form (1 - theta on success, -theta on failure), so the clipped
surrogate objective, its gradient, and every variance quantity can be
computed exactly and cross-checked by finite differences.

Baseline methods share the same rollout streams and differ only in the
advantage construction:

    grpo        group mean, standardized by the group's sample std
    adaptive    prior-fused baseline with budget sized by the scheduler
    oracle      the true expected reward of the current policy
    prior       the raw prior prediction, never fused

Fair comparisons hold per-step generation cost constant: smaller groups run
proportionally more prompts per step, cycling through the bank. The logged
gradient-variance estimate is the trace of the step gradient's covariance
(per-group sample variances of the per-sample contributions, scaled by the
group and batch averaging), which is directly comparable across methods at
compute parity.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .estimator import fused_std
from .scheduler import SchedulerConfig, run_batch
from .simulator import BernoulliRolloutEnv, PriorScenario, PromptSpec, ScenarioPriorOracle

TRAINER_METHODS = ("grpo", "adaptive", "oracle", "prior")


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logit(p):
    p = np.asarray(p, dtype=float)
    return np.log(p) - np.log1p(-p)


def bernoulli_entropy(theta):
    """Response entropy per prompt, in [0, log 2]."""
    theta = np.asarray(theta, dtype=float)
    t = np.clip(theta, 1e-12, 1.0 - 1e-12)
    return -(t * np.log(t) + (1.0 - t) * np.log(1.0 - t))


@dataclass
class PolicyState:
    """Per-prompt logits plus the pre-update snapshot used for ratios."""

    logits: np.ndarray
    old_logits: np.ndarray

    @classmethod
    def from_success_probs(cls, probs: Sequence[float]) -> "PolicyState":
        z = logit(np.asarray(probs, dtype=float))
        return cls(logits=z.copy(), old_logits=z.copy())

    def snapshot(self) -> None:
        self.old_logits = self.logits.copy()


@dataclass
class SampledGroup:
    """One prompt's rollouts for a step, with advantages attached."""

    prompt_index: int
    rewards: np.ndarray
    advantages: np.ndarray


def _ratio_and_derivative(z: float, z_old: float, rewards: np.ndarray):
    theta = float(sigmoid(z))
    theta_old = float(sigmoid(z_old))
    correct = rewards > 0
    pi = np.where(correct, theta, 1.0 - theta)
    pi_old = np.where(correct, theta_old, 1.0 - theta_old)
    rho = pi / pi_old
    dpi = np.where(correct, 1.0, -1.0) * theta * (1.0 - theta)
    return rho, dpi / pi_old


def surrogate_objective(
    logits: np.ndarray,
    old_logits: np.ndarray,
    groups: Sequence[SampledGroup],
    clip_eps: float,
) -> float:
    """Clipped surrogate: mean over groups of mean_i min(rho A, clip(rho) A)."""
    total = 0.0
    for g in groups:
        rho, _ = _ratio_and_derivative(logits[g.prompt_index], old_logits[g.prompt_index], g.rewards)
        clipped = np.clip(rho, 1.0 - clip_eps, 1.0 + clip_eps)
        total += float(np.minimum(rho * g.advantages, clipped * g.advantages).mean())
    return total / len(groups)


def surrogate_gradient(
    logits: np.ndarray,
    old_logits: np.ndarray,
    groups: Sequence[SampledGroup],
    clip_eps: float,
) -> np.ndarray:
    """Exact gradient of the clipped surrogate with respect to the logits.

    A sample contributes A * d(rho)/dz while its unclipped branch is the
    active minimum, and nothing once clipping saturates. With logits equal
    to the snapshot this reduces to the average of A * score per group.
    """
    grad = np.zeros_like(logits)
    for g in groups:
        rho, drho = _ratio_and_derivative(
            logits[g.prompt_index], old_logits[g.prompt_index], g.rewards
        )
        clipped = np.clip(rho, 1.0 - clip_eps, 1.0 + clip_eps)
        unclipped_active = rho * g.advantages <= clipped * g.advantages
        contrib = np.where(unclipped_active, g.advantages * drho, 0.0)
        grad[g.prompt_index] += contrib.mean()
    return grad / len(groups)


def reference_kl_gradient(logits: np.ndarray, ref_logits: np.ndarray) -> np.ndarray:
    """Gradient of KL(pi_theta || pi_ref) per logit."""
    theta = sigmoid(logits)
    return theta * (1.0 - theta) * (logits - ref_logits)


@dataclass(frozen=True)
class TrainerConfig:
    """Training-loop parameters; defaults favor the comparison experiments.

    batch_size is the number of bank prompts visited per step (cycling
    deterministically); None means the whole bank. For fixed-group methods
    group_size rollouts are drawn per visited prompt; the adaptive method
    budgets through the scheduler config instead.
    """

    method: str
    steps: int = 80
    bank_size: int = 32
    batch_size: int | None = None
    group_size: int = 16
    learning_rate: float = 2.5
    clip_eps: float = 0.2
    grad_clip: float = 1.0
    kl_coeff: float = 0.0
    seed: int = 0
    init_low: float = 0.25
    init_high: float = 0.75
    divergence_limit: float = 50.0
    prior_scenario: PriorScenario = PriorScenario.exact()
    scheduler: SchedulerConfig = SchedulerConfig()

    def __post_init__(self) -> None:
        if self.method not in TRAINER_METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {TRAINER_METHODS}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.bank_size < 1:
            raise ValueError(f"bank_size must be >= 1, got {self.bank_size}")
        if self.batch_size is not None and not 1 <= self.batch_size <= self.bank_size:
            raise ValueError(
                f"batch_size must be in [1, bank_size], got {self.batch_size}"
            )
        if self.group_size < 1:
            raise ValueError(f"group_size must be >= 1, got {self.group_size}")
        if not 0.0 < self.init_low <= self.init_high < 1.0:
            raise ValueError("initial success range must satisfy 0 < low <= high < 1")

    @property
    def effective_batch(self) -> int:
        return self.batch_size if self.batch_size is not None else self.bank_size


@dataclass
class TrainingTrace:
    """Per-step scalars plus the divergence flag."""

    steps: list[int] = field(default_factory=list)
    grad_norm: list[float] = field(default_factory=list)
    grad_var: list[float] = field(default_factory=list)
    entropy: list[float] = field(default_factory=list)
    mean_reward: list[float] = field(default_factory=list)
    rollouts_used: list[int] = field(default_factory=list)
    diverged: bool = False

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["step", "grad_norm", "grad_var", "entropy", "mean_reward", "rollouts_used"]
            )
            for i, step in enumerate(self.steps):
                writer.writerow(
                    [
                        step,
                        f"{self.grad_norm[i]:.10g}",
                        f"{self.grad_var[i]:.10g}",
                        f"{self.entropy[i]:.10g}",
                        f"{self.mean_reward[i]:.10g}",
                        self.rollouts_used[i],
                    ]
                )


def ema(series, decay: float = 0.9) -> np.ndarray:
    """Exponential moving average, seeded with the first value."""
    series = np.asarray(series, dtype=float)
    out = np.empty_like(series)
    if series.size == 0:
        return out
    out[0] = series[0]
    for i in range(1, series.size):
        out[i] = decay * out[i - 1] + (1.0 - decay) * series[i]
    return out


def initial_success_probs(config: TrainerConfig) -> np.ndarray:
    """Evenly spread initial difficulties across the bank."""
    if config.bank_size == 1:
        return np.array([(config.init_low + config.init_high) / 2.0])
    return np.linspace(config.init_low, config.init_high, config.bank_size)


def _grpo_advantages(rewards: np.ndarray) -> np.ndarray:
    mean = rewards.mean()
    std = rewards.std()
    if std == 0.0:
        return np.zeros_like(rewards, dtype=float)
    return (rewards - mean) / std


def _collect_groups(config, step, batch_indices, theta_old, env, prior_oracle):
    """Sample this step's groups and compute method-specific advantages.

    Returns (groups, rollouts_dispatched).
    """
    step_env = env.at_epoch(step)
    step_oracle = prior_oracle.for_epoch(step)
    specs = [
        PromptSpec(f"p{idx}", float(theta_old[idx])) for idx in batch_indices
    ]
    groups: list[SampledGroup] = []

    if config.method == "adaptive":
        results, state = run_batch(specs, step_env, step_oracle, config.scheduler)
        for spec_idx, result in enumerate(results):
            prompt_state = state.prompts[spec_idx]
            groups.append(
                SampledGroup(
                    prompt_index=batch_indices[spec_idx],
                    rewards=np.asarray(prompt_state.rewards, dtype=float),
                    advantages=np.asarray(result.advantages, dtype=float),
                )
            )
        dispatched = sum(e["dispatched"] for e in state.events)
        return groups, dispatched

    for spec_idx, spec in enumerate(specs):
        rewards = np.asarray(step_env.rollouts(spec, config.group_size, 0), dtype=float)
        if config.method == "grpo":
            adv = _grpo_advantages(rewards)
        elif config.method == "oracle":
            mu = spec.mu_true
            adv = (rewards - mu) / fused_std(mu)
        else:  # prior
            prior = step_oracle.predict(spec)
            adv = (rewards - prior.value) / fused_std(prior.value)
        groups.append(
            SampledGroup(
                prompt_index=batch_indices[spec_idx], rewards=rewards, advantages=adv
            )
        )
    return groups, len(specs) * config.group_size


def _gradient_variance_estimate(groups, theta_old) -> float:
    """Trace of the step gradient's covariance, from within-group spread.

    Per-sample contributions A_i * score_i are i.i.d. within a group; the
    group mean's variance is their sample variance over the group size, and
    batch averaging scales the total by 1/batch^2.
    """
    total = 0.0
    for g in groups:
        if len(g.rewards) < 2:
            continue
        theta = theta_old[g.prompt_index]
        score = np.where(g.rewards > 0, 1.0 - theta, -theta)
        contrib = g.advantages * score
        total += contrib.var(ddof=1) / len(contrib)
    return total / len(groups) ** 2


def train(
    config: TrainerConfig,
    env: BernoulliRolloutEnv | None = None,
    prior_oracle: ScenarioPriorOracle | None = None,
) -> TrainingTrace:
    """Run the training loop; deterministic given config and seeds.

    The environment answers correctly with the policy's own current success
    probability, so rewards track the evolving policy. The prior oracle is
    queried against the same moving target, standing in for a capability-
    aware value model. Divergence (any |logit| beyond the limit) truncates
    the trace and sets the flag.
    """
    if env is None:
        env = BernoulliRolloutEnv(config.seed)
    if prior_oracle is None:
        prior_oracle = ScenarioPriorOracle(config.seed + 1, config.prior_scenario)

    state = PolicyState.from_success_probs(initial_success_probs(config))
    ref_logits = state.logits.copy()
    trace = TrainingTrace()
    batch = config.effective_batch

    for step in range(config.steps):
        state.snapshot()
        theta_old = sigmoid(state.old_logits)
        start = (step * batch) % config.bank_size
        batch_indices = [(start + j) % config.bank_size for j in range(batch)]

        groups, dispatched = _collect_groups(
            config, step, batch_indices, theta_old, env, prior_oracle
        )
        grad = surrogate_gradient(state.logits, state.old_logits, groups, config.clip_eps)
        if config.kl_coeff > 0.0:
            grad = grad - config.kl_coeff * reference_kl_gradient(state.logits, ref_logits)
        grad_norm = float(np.linalg.norm(grad))
        update = grad
        if config.grad_clip > 0.0 and grad_norm > config.grad_clip:
            update = grad * (config.grad_clip / grad_norm)
        state.logits = state.logits + config.learning_rate * update

        all_rewards = np.concatenate([g.rewards for g in groups])
        trace.steps.append(step)
        trace.grad_norm.append(grad_norm)
        trace.grad_var.append(_gradient_variance_estimate(groups, theta_old))
        trace.entropy.append(float(bernoulli_entropy(sigmoid(state.logits)).mean()))
        trace.mean_reward.append(float(all_rewards.mean()))
        trace.rollouts_used.append(int(dispatched))

        if np.any(np.abs(state.logits) > config.divergence_limit):
            trace.diverged = True
            break
    return trace


@dataclass(frozen=True)
class ComparisonSettings:
    """Shared parameters for one adaptive-vs-fixed comparison cell.

    Per-step generation cost is matched by construction: the fixed-group
    method visits bank_size * k_init / grpo_group prompts per step with
    grpo_group rollouts each, while the adaptive method visits the whole
    bank at cold-start size k_init.
    """

    steps: int = 80
    bank_size: int = 32
    learning_rate: float = 2.5
    clip_eps: float = 0.2
    grpo_group: int = 16
    scheduler: SchedulerConfig = SchedulerConfig()
    prior_scenario: PriorScenario = PriorScenario.exact()

    @property
    def grpo_batch(self) -> int:
        return max(1, self.bank_size * self.scheduler.allocator.k_init // self.grpo_group)


@dataclass
class MethodPairTraces:
    """Both methods' traces for one seed."""

    seed: int
    adaptive: TrainingTrace
    grpo: TrainingTrace


def run_comparison_cell(settings: ComparisonSettings, seed: int) -> MethodPairTraces:
    """Train both methods for one seed under matched compute."""
    common = dict(
        steps=settings.steps,
        bank_size=settings.bank_size,
        learning_rate=settings.learning_rate,
        clip_eps=settings.clip_eps,
        prior_scenario=settings.prior_scenario,
        scheduler=settings.scheduler,
        seed=seed,
    )
    t_adaptive = train(TrainerConfig(method="adaptive", batch_size=settings.bank_size, **common))
    t_grpo = train(
        TrainerConfig(
            method="grpo",
            batch_size=settings.grpo_batch,
            group_size=settings.grpo_group,
            **common,
        )
    )
    return MethodPairTraces(seed=seed, adaptive=t_adaptive, grpo=t_grpo)


@dataclass
class ComparisonSummary:
    """Multi-seed comparison of the adaptive method against fixed groups."""

    seeds: int
    steps: int
    fraction_var_lower: float
    adaptive_final_entropy: float
    grpo_final_entropy: float
    adaptive_mean_rollouts: float
    grpo_mean_rollouts: float
    adaptive_var_ema: np.ndarray
    grpo_var_ema: np.ndarray
    any_diverged: bool

    @property
    def variance_claim_holds(self) -> bool:
        return self.fraction_var_lower >= 0.8

    @property
    def entropy_claim_holds(self) -> bool:
        return self.adaptive_final_entropy > self.grpo_final_entropy


def summarize_comparison(cells: Sequence[MethodPairTraces]) -> ComparisonSummary:
    """Aggregate per-seed traces: seed-mean EMA(0.9) variance and entropies."""
    adaptive_var = [ema(c.adaptive.grad_var) for c in cells]
    grpo_var = [ema(c.grpo.grad_var) for c in cells]
    n_steps = min(min(len(v) for v in adaptive_var), min(len(v) for v in grpo_var))
    adaptive_mean = np.mean([v[:n_steps] for v in adaptive_var], axis=0)
    grpo_mean = np.mean([v[:n_steps] for v in grpo_var], axis=0)
    return ComparisonSummary(
        seeds=len(cells),
        steps=n_steps,
        fraction_var_lower=float(np.mean(adaptive_mean <= grpo_mean)),
        adaptive_final_entropy=float(np.mean([c.adaptive.entropy[-1] for c in cells])),
        grpo_final_entropy=float(np.mean([c.grpo.entropy[-1] for c in cells])),
        adaptive_mean_rollouts=float(np.mean([np.mean(c.adaptive.rollouts_used) for c in cells])),
        grpo_mean_rollouts=float(np.mean([np.mean(c.grpo.rollouts_used) for c in cells])),
        adaptive_var_ema=adaptive_mean,
        grpo_var_ema=grpo_mean,
        any_diverged=any(c.adaptive.diverged or c.grpo.diverged for c in cells),
    )


def compare_adaptive_vs_grpo(
    settings: ComparisonSettings = ComparisonSettings(),
    seeds: int = 20,
    base_seed: int = 0,
) -> ComparisonSummary:
    """Run the full multi-seed comparison serially."""
    cells = [run_comparison_cell(settings, base_seed + 1000 * s) for s in range(seeds)]
    return summarize_comparison(cells)
