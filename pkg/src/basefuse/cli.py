"""Command-line entry point for the experiment suites.

Modes:
    verify    run the check battery, write MC reports as JSON
    allocate  run the batch scheduler over configured scenarios, write
              per-round JSON-lines logs and final allocations
    train     run one training loop, write the trace CSV
    sweep     multi-seed adaptive-vs-fixed comparison, write per-cell CSVs
              and the aggregate verdict

Exit codes: 0 all enabled checks passed, 1 at least one check failed,
2 invalid configuration. Identical config and seed reproduce every output
byte-for-byte; the only non-deterministic content is the timestamp header
line in summary.txt. Partial outputs are removed when a run errors out.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

from .config import ConfigError, ExperimentConfig, build_config, load_config_file
from .scheduler import SupportBuffer, run_batch
from .simulator import BernoulliRolloutEnv, ScenarioPriorOracle
from .trainer import (
    ComparisonSettings,
    run_comparison_cell,
    summarize_comparison,
    train,
)
from .verify import gradient_bound_suite, verification_suite


class OutputWriter:
    """Tracks files written during a run so failures can clean them up."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.paths: list[Path] = []

    def path(self, name: str) -> Path:
        p = self.out_dir / name
        self.paths.append(p)
        return p

    def write_json(self, name: str, payload) -> Path:
        p = self.path(name)
        p.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        return p

    def write_jsonl(self, name: str, rows) -> Path:
        p = self.path(name)
        with open(p, "w") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        return p

    def cleanup(self) -> None:
        for p in self.paths:
            try:
                p.unlink(missing_ok=True)
            except OSError:
                pass


def _run_verify(cfg: ExperimentConfig, writer: OutputWriter) -> tuple[bool, list[str]]:
    reports = verification_suite(
        cfg.seed,
        trials=cfg.verify.trials,
        episodes=cfg.verify.episodes,
        config=cfg.scheduler.allocator,
    )
    grad_reports = gradient_bound_suite(cfg.seed + 7, trials=cfg.verify.trials)
    writer.write_json("mc_reports.json", [r.to_dict() for r in reports])
    writer.write_json("gradient_reports.json", [r.to_dict() for r in grad_reports])

    lines = []
    ok = True
    for r in reports:
        verdict = "pass" if r.passed else ("----" if r.passed is None else "FAIL")
        if r.passed is False:
            ok = False
        lines.append(f"{verdict}  {r.name}  estimate={r.estimate:.6g} se={r.std_error:.3g}")
    ratios = [
        r.details["ratio_to_cost"] for r in reports if "ratio_to_cost" in r.details
    ]
    if ratios:
        worst = max(ratios)
        lines.append(f"----  regret_ratio_max  {worst:.4g} (fitted constant across the cost grid)")
    for g in grad_reports:
        if g.status == "fail":
            ok = False
        lines.append(
            f"{'pass' if g.status == 'pass' else g.status.upper()}  "
            f"gradient_bound[{g.baseline},theta={g.theta}]  "
            f"var={g.var_trace:.6g} bound={g.bound_value:.6g} slack={g.slack:.3g}"
        )
    return ok, lines


def _run_allocate(cfg: ExperimentConfig, writer: OutputWriter) -> tuple[bool, list[str]]:
    env = BernoulliRolloutEnv(cfg.seed)
    oracle = ScenarioPriorOracle(
        cfg.seed + 1, {s.prompt.prompt_id: s.prior for s in cfg.scenarios}
    )
    buffer = SupportBuffer(cfg.scheduler.support_capacity)
    prompts = [s.prompt for s in cfg.scenarios]
    results, state = run_batch(prompts, env, oracle, cfg.scheduler, buffer)

    writer.write_jsonl("rounds.jsonl", state.events)
    allocations = []
    for result, pstate in zip(results, state.prompts):
        allocations.append(
            {
                "prompt_id": result.prompt_id,
                "k": pstate.k,
                "v_bar": pstate.group().v_bar,
                "prior_value": pstate.prior.value,
                "bias_sq": result.fusion.bias_sq,
                "weight": result.fusion.weight,
                "baseline": result.fusion.baseline,
                "std": result.fusion.std,
                "advantages": result.advantages,
                "force_stopped": pstate.force_stopped,
            }
        )
    writer.write_json("allocations.json", allocations)

    alloc = cfg.scheduler.allocator
    ks = [p.k for p in state.prompts]
    in_range = all(alloc.k_init <= k <= alloc.budget_cap for k in ks)
    lines = [
        f"{'pass' if in_range else 'FAIL'}  realized budgets in "
        f"[{alloc.k_init}, {alloc.budget_cap}]  (min={min(ks)}, max={max(ks)})",
        f"----  mean rollouts per prompt: {sum(ks) / len(ks):.4g}",
        f"----  rounds: {state.round_index}, support buffer size: {len(buffer)}",
    ]
    return in_range, lines


def _run_train(cfg: ExperimentConfig, writer: OutputWriter) -> tuple[bool, list[str]]:
    trace = train(cfg.trainer)
    trace_path = writer.path("trace.csv")
    trace.write_csv(trace_path)
    lines = [
        f"{'FAIL' if trace.diverged else 'pass'}  training "
        f"{'diverged' if trace.diverged else 'completed'} after {len(trace.steps)} steps",
        f"----  final entropy: {trace.entropy[-1]:.6g}",
        f"----  mean rollouts per step: {sum(trace.rollouts_used) / len(trace.rollouts_used):.4g}",
    ]
    return not trace.diverged, lines


def _sweep_cell(args):
    settings, seed = args
    return run_comparison_cell(settings, seed)


def _run_sweep(
    cfg: ExperimentConfig, writer: OutputWriter, jobs: int
) -> tuple[bool, list[str]]:
    sweep = cfg.sweep
    settings = ComparisonSettings(
        steps=sweep.steps,
        bank_size=sweep.bank_size,
        learning_rate=sweep.learning_rate,
        grpo_group=sweep.grpo_group,
        scheduler=cfg.scheduler,
        prior_scenario=sweep.prior,
    )
    seeds = [cfg.seed + 1000 * s for s in range(sweep.seeds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(_sweep_cell, [(settings, s) for s in seeds]))
    else:
        cells = [run_comparison_cell(settings, s) for s in seeds]

    for cell in cells:
        cell.adaptive.write_csv(writer.path(f"sweep_adaptive_seed{cell.seed}.csv"))
        cell.grpo.write_csv(writer.path(f"sweep_grpo_seed{cell.seed}.csv"))

    summary = summarize_comparison(cells)
    rows = [
        {
            "step": i,
            "adaptive_var_ema": float(summary.adaptive_var_ema[i]),
            "grpo_var_ema": float(summary.grpo_var_ema[i]),
        }
        for i in range(summary.steps)
    ]
    writer.write_jsonl("sweep_variance.jsonl", rows)

    ok = summary.variance_claim_holds and summary.entropy_claim_holds and not summary.any_diverged
    lines = [
        f"{'pass' if summary.variance_claim_holds else 'FAIL'}  smoothed gradient variance lower "
        f"at {summary.fraction_var_lower:.0%} of steps (need >= 80%)",
        f"{'pass' if summary.entropy_claim_holds else 'FAIL'}  final entropy "
        f"{summary.adaptive_final_entropy:.4g} vs fixed-group {summary.grpo_final_entropy:.4g}",
        f"{'FAIL' if summary.any_diverged else 'pass'}  no divergence across "
        f"{summary.seeds} seeds",
        f"----  mean rollouts/step: {summary.adaptive_mean_rollouts:.4g} adaptive vs "
        f"{summary.grpo_mean_rollouts:.4g} fixed",
    ]
    return ok, lines


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="basefuse",
        description="Adaptive prior-fused baseline experiments",
    )
    parser.add_argument("--config", required=True, help="path to a YAML or JSON config file")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", default=None, help="override the output directory")
    parser.add_argument(
        "--mode", choices=["verify", "allocate", "train", "sweep"], default=None
    )
    parser.add_argument("--jobs", type=int, default=1, help="parallel workers for sweep cells")
    args = parser.parse_args(argv)

    try:
        raw = load_config_file(args.config)
        cfg = build_config(
            raw, seed_override=args.seed, out_override=args.out, mode_override=args.mode
        )
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    writer = OutputWriter(out_dir)

    runners = {
        "verify": lambda: _run_verify(cfg, writer),
        "allocate": lambda: _run_allocate(cfg, writer),
        "train": lambda: _run_train(cfg, writer),
        "sweep": lambda: _run_sweep(cfg, writer, args.jobs),
    }
    try:
        ok, lines = runners[cfg.mode]()
    except Exception:
        writer.cleanup()
        raise

    stamp = datetime.now(timezone.utc).isoformat()
    summary = writer.path("summary.txt")
    body = [f"# generated {stamp}", f"mode: {cfg.mode}", f"seed: {cfg.seed}", ""]
    body.extend(lines)
    body.append("")
    body.append("RESULT: " + ("PASS" if ok else "FAIL"))
    summary.write_text("\n".join(body) + "\n")
    print("\n".join(lines))
    print("RESULT: " + ("PASS" if ok else "FAIL"))
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
