"""Batch orchestration of prior queries, cold start, and adaptive rollouts.

Workflow per batch: query the prior for every prompt first, cold-start all
prompts at k_init rollouts, then iterate rounds. Each round re-evaluates the
stopping rule per active prompt on its full current data. If fewer than
halt_fraction of the batch still needs compute, generation halts globally
and the stragglers are fused with the data they have. Otherwise the round's
nominal request (increment x active count) is padded up to a multiple of
pad_multiple, mimicking dispatch alignment on parallel hardware; surplus
slots are attributed round-robin to active prompts below their budget cap
(or discarded when count_padding is off or no prompt can absorb them).

State mutation is atomic per round: reward generation failures leave the
batch unchanged. Rollout generation within a round may fan out; decision
evaluation and state mutation are serialized per batch.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .allocator import AllocatorConfig, decide
from .estimator import FusionResult, PriorEstimate, RolloutGroup, advantages, fuse
from .simulator import PromptSpec


@dataclass(frozen=True)
class SchedulerConfig:
    """Batch-level knobs on top of the per-prompt allocator.

    count_padding controls whether padding surplus rollouts count toward the
    receiving prompts' statistics (default) or are generated-and-discarded.
    """

    allocator: AllocatorConfig = AllocatorConfig()
    halt_fraction: float = 0.25
    pad_multiple: int = 32
    support_capacity: int = 512
    support_sample: int = 256
    count_padding: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.halt_fraction <= 1.0:
            raise ValueError(f"halt_fraction must be in (0, 1], got {self.halt_fraction}")
        if self.pad_multiple < 1:
            raise ValueError(f"pad_multiple must be >= 1, got {self.pad_multiple}")
        if self.support_capacity < 1:
            raise ValueError(f"support_capacity must be >= 1, got {self.support_capacity}")
        if self.support_sample < 1:
            raise ValueError(f"support_sample must be >= 1, got {self.support_sample}")


class SupportBuffer:
    """Ring of (prompt_id, reward) pairs with oldest-first eviction."""

    def __init__(self, capacity: int = 512):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self._ring: deque[tuple[str, int]] = deque(maxlen=capacity)

    @property
    def capacity(self) -> int:
        return self._ring.maxlen or 0

    def __len__(self) -> int:
        return len(self._ring)

    def push(self, prompt_id: str, reward: int) -> None:
        self._ring.append((prompt_id, reward))

    def extend(self, pairs: Iterable[tuple[str, int]]) -> None:
        for prompt_id, reward in pairs:
            self.push(prompt_id, reward)

    def sample(self, n: int, rng) -> list[tuple[str, int]]:
        """Up to n pairs sampled without replacement."""
        items = list(self._ring)
        if not items:
            return []
        n = min(n, len(items))
        idx = rng.choice(len(items), size=n, replace=False)
        return [items[i] for i in idx]


ACTIVE = "active"
STOPPED = "stopped"


@dataclass
class PromptState:
    """Mutable per-prompt record inside a batch."""

    spec: PromptSpec
    prior: PriorEstimate
    rewards: list[int]
    phase: str = ACTIVE
    fusion: FusionResult | None = None
    force_stopped: bool = False
    prior_order: int = -1
    first_rollout_order: int = -1

    @property
    def k(self) -> int:
        return len(self.rewards)

    def group(self) -> RolloutGroup:
        return RolloutGroup(self.spec.prompt_id, tuple(self.rewards))


@dataclass
class BatchState:
    """All per-prompt state plus the round counter and event log."""

    prompts: list[PromptState]
    round_index: int = 1
    next_order: int = 0
    events: list[dict] = field(default_factory=list)

    def active(self) -> list[PromptState]:
        return [p for p in self.prompts if p.phase == ACTIVE]

    def all_stopped(self) -> bool:
        return all(p.phase == STOPPED for p in self.prompts)

    def take_order(self) -> int:
        order = self.next_order
        self.next_order += 1
        return order


@dataclass(frozen=True)
class PromptResult:
    prompt_id: str
    fusion: FusionResult
    advantages: list[float]


def _pad_up(n: int, multiple: int) -> int:
    return int(math.ceil(n / multiple)) * multiple


def cold_start(
    prompts: Sequence[PromptSpec],
    env,
    prior_oracle,
    config: SchedulerConfig,
    support_buffer: SupportBuffer | None = None,
) -> BatchState:
    """Query priors, then give every prompt exactly k_init rollouts.

    Prior queries strictly precede each prompt's first rollout; env or
    oracle failures propagate immediately.
    """
    if len(prompts) == 0:
        raise ValueError("empty batch")
    seen: set[str] = set()
    for spec in prompts:
        if spec.prompt_id in seen:
            raise ValueError(f"duplicate prompt_id {spec.prompt_id!r} in batch")
        seen.add(spec.prompt_id)

    state = BatchState(prompts=[])
    context = None
    if support_buffer is not None and len(support_buffer) > 0:
        rng = env.support_rng(0) if hasattr(env, "support_rng") else None
        if rng is not None:
            context = support_buffer.sample(config.support_sample, rng)

    k_init = config.allocator.k_init
    entries = []
    for spec in prompts:
        prior = prior_oracle.predict(spec, context)
        prior_order = state.take_order()
        rewards = list(env.rollouts(spec, k_init, 0))
        first_order = state.take_order()
        entries.append(
            PromptState(
                spec=spec,
                prior=prior,
                rewards=rewards,
                prior_order=prior_order,
                first_rollout_order=first_order,
            )
        )
    state.prompts = entries
    state.events.append(
        {
            "round": 0,
            "cold_start": True,
            "batch": len(prompts),
            "active": len(prompts),
            "requested": k_init * len(prompts),
            "dispatched": k_init * len(prompts),
            "attributed": k_init * len(prompts),
            "discarded": 0,
            "global_halt": False,
            "prompts": [
                {
                    "prompt_id": p.spec.prompt_id,
                    "k": p.k,
                    "v_bar": p.group().v_bar,
                    "prior_value": p.prior.value,
                }
                for p in state.prompts
            ],
        }
    )
    return state


def _distribute_surplus(
    surplus: int, order: list[int], extra: dict[int, int], capacity: dict[int, int]
) -> int:
    """Round-robin surplus over prompts with remaining capacity; returns leftovers."""
    while surplus > 0:
        progressed = False
        for idx in order:
            if surplus == 0:
                break
            if extra[idx] < capacity[idx]:
                extra[idx] += 1
                surplus -= 1
                progressed = True
        if not progressed:
            break
    return surplus


def run_round(state: BatchState, env, config: SchedulerConfig) -> BatchState:
    """One decision-and-dispatch round; mutates and returns the state.

    All effects (stop transitions, new rewards, the event record) commit
    together; an env failure leaves the state untouched.
    """
    active = state.active()
    if not active:
        raise ValueError("no active prompts")

    batch_size = len(state.prompts)
    round_index = state.round_index
    alloc = config.allocator

    decisions = {}
    for p in active:
        decisions[id(p)] = decide(p.group(), p.prior, alloc)

    continuing = [p for p in active if not decisions[id(p)].stop]
    global_halt = len(continuing) / batch_size < config.halt_fraction

    prompt_rows = []
    for p in active:
        d = decisions[id(p)]
        if d.stop:
            outcome = "stop"
        elif global_halt:
            outcome = "halted"
        else:
            outcome = "more"
        prompt_rows.append(
            {
                "prompt_id": p.spec.prompt_id,
                "k": p.k,
                "v_bar": p.group().v_bar,
                "bias_sq": d.bias_sq,
                # -inf (prior accepted) serializes as null for strict JSON
                "k_target": d.k_target if math.isfinite(d.k_target) else None,
                "decision": outcome,
            }
        )

    requested = 0
    dispatched = 0
    attributed_total = 0
    new_rewards: dict[int, list[int]] = {}

    if not global_halt:
        indices = list(range(len(continuing)))
        capacity = {i: alloc.budget_cap - continuing[i].k for i in indices}
        base = {i: min(alloc.increment, capacity[i]) for i in indices}
        requested = alloc.increment * len(continuing)
        dispatched = _pad_up(requested, config.pad_multiple)
        surplus = dispatched - sum(base.values())
        extra = dict(base)
        if config.count_padding:
            _distribute_surplus(surplus, indices, extra, capacity)
        # Draw everything before mutating anything: an env exception here
        # must leave the batch state unchanged.
        for i in indices:
            n = extra[i]
            if n > 0:
                new_rewards[i] = list(env.rollouts(continuing[i].spec, n, round_index))
        attributed_total = sum(extra.values())

    # Commit phase: no exceptions past this point.
    stopped_count = 0
    for p in active:
        d = decisions[id(p)]
        if d.stop:
            p.phase = STOPPED
            p.fusion = fuse(p.group(), p.prior)
            stopped_count += 1
        elif global_halt:
            p.phase = STOPPED
            p.force_stopped = True
            p.fusion = fuse(p.group(), p.prior)
            stopped_count += 1
    for i, rewards in new_rewards.items():
        continuing[i].rewards.extend(rewards)

    state.events.append(
        {
            "round": round_index,
            "cold_start": False,
            "batch": batch_size,
            "active": len(state.active()),
            "requested": requested,
            "dispatched": dispatched,
            "attributed": attributed_total,
            "discarded": dispatched - attributed_total,
            "global_halt": global_halt,
            "stopped": stopped_count,
            "prompts": prompt_rows,
        }
    )
    state.round_index = round_index + 1
    return state


def finalize(
    state: BatchState, support_buffer: SupportBuffer | None = None
) -> list[PromptResult]:
    """Fuse every prompt's final observations and standardize advantages.

    Also appends every (prompt_id, reward) pair to the support buffer, the
    single write point for that structure.
    """
    if not state.all_stopped():
        raise ValueError("batch incomplete: active prompts remain")
    results = []
    for p in state.prompts:
        fusion = p.fusion if p.fusion is not None else fuse(p.group(), p.prior)
        results.append(
            PromptResult(
                prompt_id=p.spec.prompt_id,
                fusion=fusion,
                advantages=advantages(p.group(), fusion),
            )
        )
    if support_buffer is not None:
        for p in state.prompts:
            for r in p.rewards:
                support_buffer.push(p.spec.prompt_id, r)
    return results


def run_batch(
    prompts: Sequence[PromptSpec],
    env,
    prior_oracle,
    config: SchedulerConfig,
    support_buffer: SupportBuffer | None = None,
) -> tuple[list[PromptResult], BatchState]:
    """Cold start, iterate rounds to completion, finalize."""
    state = cold_start(prompts, env, prior_oracle, config, support_buffer)
    while not state.all_stopped():
        run_round(state, env, config)
    return finalize(state, support_buffer), state
