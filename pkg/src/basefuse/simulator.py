"""Synthetic environment: Bernoulli +-1 rewards and a configurable prior oracle.

Each prompt has a true success probability p_true, so the true expected
reward is mu_true = 2 * p_true - 1. Rollouts are i.i.d. +-1 draws. The
prior oracle stands in for a frozen pretrained value model; its error mode
is controlled by a scenario:

    exact           prior value equals mu_true (true squared bias 0)
    fixed_bias      mu_true shifted by a constant offset, clamped
    hallucinated    a forced value, independent of the prompt
    noisy_unbiased  mu_true plus centered gaussian noise, clamped

Randomness is counter-based: every stream is keyed by
(seed, domain, epoch, prompt, round), so a prompt's reward sequence depends
only on its own key, never on batch composition or allocation order.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .estimator import PriorEstimate

_DOMAIN_REWARDS = 0
_DOMAIN_PRIOR = 1
_DOMAIN_SUPPORT = 2

SCENARIO_KINDS = ("exact", "fixed_bias", "hallucinated", "noisy_unbiased")


def prompt_key(prompt_id: str) -> int:
    """Stable 64-bit key for a prompt identifier (independent of hash seed)."""
    digest = hashlib.blake2b(prompt_id.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def stream(seed: int, domain: int, *keys: int) -> np.random.Generator:
    """Deterministic generator keyed by (seed, domain, *keys)."""
    return np.random.default_rng(np.random.SeedSequence([seed, domain, *keys]))


@dataclass(frozen=True)
class PromptSpec:
    """Synthetic prompt: identifier plus true success probability."""

    prompt_id: str
    p_true: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_true <= 1.0:
            raise ValueError(f"p_true must be in [0, 1], got {self.p_true}")

    @property
    def mu_true(self) -> float:
        """True expected reward 2 * p_true - 1."""
        return 2.0 * self.p_true - 1.0


@dataclass(frozen=True)
class PriorScenario:
    """How the prior oracle errs relative to the truth."""

    kind: str
    offset: float = 0.0
    value: float = 0.0
    std: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in SCENARIO_KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}; expected one of {SCENARIO_KINDS}")
        if self.kind == "hallucinated" and not -1.0 <= self.value <= 1.0:
            raise ValueError(f"hallucinated value must be in [-1, 1], got {self.value}")
        if self.kind == "noisy_unbiased" and self.std < 0:
            raise ValueError(f"noise std must be >= 0, got {self.std}")

    @classmethod
    def exact(cls) -> "PriorScenario":
        return cls(kind="exact")

    @classmethod
    def fixed_bias(cls, offset: float) -> "PriorScenario":
        return cls(kind="fixed_bias", offset=offset)

    @classmethod
    def hallucinated(cls, value: float) -> "PriorScenario":
        return cls(kind="hallucinated", value=value)

    @classmethod
    def noisy_unbiased(cls, std: float) -> "PriorScenario":
        return cls(kind="noisy_unbiased", std=std)

    @classmethod
    def from_dict(cls, data: Mapping) -> "PriorScenario":
        kind = data.get("kind")
        if kind == "exact":
            return cls.exact()
        if kind == "fixed_bias":
            return cls.fixed_bias(float(data["offset"]))
        if kind == "hallucinated":
            return cls.hallucinated(float(data["value"]))
        if kind == "noisy_unbiased":
            return cls.noisy_unbiased(float(data["std"]))
        raise ValueError(f"unknown scenario kind {kind!r}; expected one of {SCENARIO_KINDS}")

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.kind == "fixed_bias":
            out["offset"] = self.offset
        elif self.kind == "hallucinated":
            out["value"] = self.value
        elif self.kind == "noisy_unbiased":
            out["std"] = self.std
        return out


def _clamp_value(value: float) -> float:
    return min(1.0, max(-1.0, value))


def sample_rollouts(spec: PromptSpec, n: int, rng: np.random.Generator) -> list[int]:
    """n i.i.d. rewards with P(+1) = p_true."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    hits = rng.random(n) < spec.p_true
    return [1 if h else -1 for h in hits]


def prior_predict(
    spec: PromptSpec, scenario: PriorScenario, rng: np.random.Generator
) -> PriorEstimate:
    """Scenario-controlled prior prediction, always clamped to [-1, 1]."""
    if scenario.kind == "exact":
        value = spec.mu_true
    elif scenario.kind == "fixed_bias":
        value = _clamp_value(spec.mu_true + scenario.offset)
    elif scenario.kind == "hallucinated":
        value = scenario.value
    else:  # noisy_unbiased
        value = _clamp_value(spec.mu_true + rng.normal(0.0, scenario.std))
    return PriorEstimate.from_value(value)


class BernoulliRolloutEnv:
    """Reward source with one stream per (prompt, round).

    Each (prompt, round) pair must be drawn at most once; the scheduler
    batches all of a round's observations for a prompt into a single call.
    The optional epoch key separates independent uses of the same seed,
    e.g. one trainer step per epoch.
    """

    def __init__(self, seed: int, epoch: int = 0):
        self.seed = seed
        self.epoch = epoch

    def rollouts(self, spec: PromptSpec, n: int, round_index: int) -> list[int]:
        rng = stream(self.seed, _DOMAIN_REWARDS, self.epoch, prompt_key(spec.prompt_id), round_index)
        return sample_rollouts(spec, n, rng)

    def at_epoch(self, epoch: int) -> "BernoulliRolloutEnv":
        return BernoulliRolloutEnv(self.seed, epoch)

    def support_rng(self, round_index: int = 0) -> np.random.Generator:
        """Stream for support-buffer subsampling, separate from rewards."""
        return stream(self.seed, _DOMAIN_SUPPORT, self.epoch, round_index)


class ScenarioPriorOracle:
    """Prior oracle driven by scenarios; ignores the support context.

    Accepts either a single scenario for all prompts or a mapping from
    prompt_id to scenario. The context argument keeps the interface of a
    real in-context value model; scenario oracles do not consume it.
    """

    def __init__(
        self,
        seed: int,
        scenario: PriorScenario | Mapping[str, PriorScenario],
        epoch: int = 0,
    ):
        self.seed = seed
        self.scenario = scenario
        self.epoch = epoch

    def _scenario_for(self, spec: PromptSpec) -> PriorScenario:
        if isinstance(self.scenario, PriorScenario):
            return self.scenario
        try:
            return self.scenario[spec.prompt_id]
        except KeyError:
            raise KeyError(f"no prior scenario configured for prompt {spec.prompt_id!r}")

    def predict(
        self,
        spec: PromptSpec,
        context: Sequence[tuple[str, int]] | None = None,
    ) -> PriorEstimate:
        rng = stream(self.seed, _DOMAIN_PRIOR, self.epoch, prompt_key(spec.prompt_id))
        return prior_predict(spec, self._scenario_for(spec), rng)

    def for_epoch(self, epoch: int) -> "ScenarioPriorOracle":
        return ScenarioPriorOracle(self.seed, self.scenario, epoch)
