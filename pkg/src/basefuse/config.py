"""Experiment configuration: schema, validation, and file loading.

Configs are a single nested key/value document. YAML is the canonical
encoding; JSON parses identically since it is a YAML subset. Every field
has a default matching the deployed constants, except the seed, which must
be given explicitly (reproducibility is not optional). Validation errors
name the offending field.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import yaml

from .allocator import AllocatorConfig
from .scheduler import SchedulerConfig
from .simulator import PriorScenario, PromptSpec
from .trainer import TrainerConfig

MODES = ("verify", "allocate", "train", "sweep")


class ConfigError(ValueError):
    """Invalid experiment config; carries the offending field path."""

    def __init__(self, field_path: str, message: str):
        self.field_path = field_path
        super().__init__(f"{field_path}: {message}")


@dataclass(frozen=True)
class ScenarioSpec:
    """One synthetic prompt paired with its prior-generation scenario."""

    prompt: PromptSpec
    prior: PriorScenario


@dataclass(frozen=True)
class VerifyOptions:
    trials: int = 200_000
    episodes: int = 20_000

    def __post_init__(self) -> None:
        if self.trials < 1000:
            raise ValueError("trials must be >= 1000")
        if self.episodes < 1000:
            raise ValueError("episodes must be >= 1000")


@dataclass(frozen=True)
class SweepOptions:
    seeds: int = 20
    steps: int = 80
    bank_size: int = 32
    grpo_group: int = 16
    learning_rate: float = 2.5
    prior: PriorScenario = PriorScenario.exact()

    def __post_init__(self) -> None:
        if self.seeds < 1:
            raise ValueError("seeds must be >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str
    seed: int
    out_dir: str
    scenarios: tuple[ScenarioSpec, ...] = ()
    scheduler: SchedulerConfig = SchedulerConfig()
    trainer: TrainerConfig | None = None
    verify: VerifyOptions = VerifyOptions()
    sweep: SweepOptions = SweepOptions()


def _require_mapping(value, path: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(path, f"expected a mapping, got {type(value).__name__}")
    return value


def _reject_unknown(data: dict, allowed: set[str], path: str) -> None:
    unknown = set(data) - allowed
    if unknown:
        name = sorted(unknown)[0]
        raise ConfigError(f"{path}.{name}" if path else name, "unknown field")


def _build_scenarios(raw, path: str) -> tuple[ScenarioSpec, ...]:
    if raw is None:
        return ()
    if not isinstance(raw, list):
        raise ConfigError(path, "expected a list of scenario entries")
    out = []
    for i, entry in enumerate(raw):
        entry_path = f"{path}[{i}]"
        entry = _require_mapping(entry, entry_path)
        _reject_unknown(entry, {"prompt_id", "p_true", "prior"}, entry_path)
        if "p_true" not in entry:
            raise ConfigError(f"{entry_path}.p_true", "required")
        try:
            prompt = PromptSpec(
                prompt_id=str(entry.get("prompt_id", f"q{i}")),
                p_true=float(entry["p_true"]),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{entry_path}.p_true", str(exc)) from exc
        if "prior" not in entry:
            raise ConfigError(f"{entry_path}.prior", "required")
        try:
            prior = PriorScenario.from_dict(_require_mapping(entry["prior"], f"{entry_path}.prior"))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{entry_path}.prior", str(exc)) from exc
        out.append(ScenarioSpec(prompt=prompt, prior=prior))
    return tuple(out)


def _build_dataclass(cls, raw, path: str, defaults=None, converters=None):
    if raw is None:
        return defaults if defaults is not None else cls()
    raw = _require_mapping(raw, path)
    fields = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
    _reject_unknown(raw, fields, path)
    kwargs = dict(raw)
    if converters:
        for key, fn in converters.items():
            if key in kwargs:
                try:
                    kwargs[key] = fn(kwargs[key], f"{path}.{key}")
                except ConfigError:
                    raise
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"{path}.{key}", str(exc)) from exc
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from exc


def _scenario_converter(value, path: str) -> PriorScenario:
    try:
        return PriorScenario.from_dict(_require_mapping(value, path))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from exc


def load_config_file(path) -> dict:
    """Parse a YAML (or JSON) config file into a raw mapping."""
    text = Path(path).read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"unparseable config: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(str(path), "top level must be a mapping")
    return raw


def build_config(
    raw: dict,
    seed_override: int | None = None,
    out_override: str | None = None,
    mode_override: str | None = None,
) -> ExperimentConfig:
    """Validate a raw mapping (plus CLI overrides) into an ExperimentConfig."""
    _reject_unknown(
        raw,
        {"mode", "seed", "out", "scenarios", "allocator", "scheduler", "trainer", "verify", "sweep"},
        "",
    )

    mode = mode_override or raw.get("mode")
    if mode is None:
        raise ConfigError("mode", "required (or pass --mode)")
    if mode not in MODES:
        raise ConfigError("mode", f"must be one of {MODES}, got {mode!r}")

    seed = seed_override if seed_override is not None else raw.get("seed")
    if seed is None:
        raise ConfigError("seed", "seed required for reproducibility")
    try:
        seed = int(seed)
    except (TypeError, ValueError):
        raise ConfigError("seed", f"must be an integer, got {raw.get('seed')!r}")
    if seed < 0:
        raise ConfigError("seed", "must be >= 0")

    out_dir = out_override or raw.get("out") or "results"

    allocator = _build_dataclass(AllocatorConfig, raw.get("allocator"), "allocator")
    scheduler = _build_dataclass(
        SchedulerConfig,
        raw.get("scheduler"),
        "scheduler",
        defaults=SchedulerConfig(allocator=allocator),
        converters={
            "allocator": lambda v, p: _build_dataclass(AllocatorConfig, v, p)
        },
    )
    if raw.get("scheduler") is not None and "allocator" not in raw["scheduler"]:
        scheduler = SchedulerConfig(
            **{
                **{f: getattr(scheduler, f) for f in scheduler.__dataclass_fields__},
                "allocator": allocator,
            }
        )

    trainer = None
    if raw.get("trainer") is not None:
        trainer_raw = dict(_require_mapping(raw["trainer"], "trainer"))
        trainer_raw.setdefault("scheduler", None)
        converters = {
            "prior_scenario": _scenario_converter,
            "scheduler": lambda v, p: scheduler
            if v is None
            else _build_dataclass(
                SchedulerConfig,
                v,
                p,
                converters={"allocator": lambda a, q: _build_dataclass(AllocatorConfig, a, q)},
            ),
        }
        trainer = _build_dataclass(TrainerConfig, trainer_raw, "trainer", converters=converters)
    elif mode == "train":
        raise ConfigError("trainer", "required for mode=train")

    verify = _build_dataclass(VerifyOptions, raw.get("verify"), "verify")
    sweep = _build_dataclass(
        SweepOptions, raw.get("sweep"), "sweep", converters={"prior": _scenario_converter}
    )

    scenarios = _build_scenarios(raw.get("scenarios"), "scenarios")
    if mode == "allocate" and not scenarios:
        raise ConfigError("scenarios", "required for mode=allocate")

    return ExperimentConfig(
        mode=mode,
        seed=seed,
        out_dir=str(out_dir),
        scenarios=scenarios,
        scheduler=scheduler,
        trainer=trainer,
        verify=verify,
        sweep=sweep,
    )
