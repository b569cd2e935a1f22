"""Command-line interface.

Subcommands:
  train    run training from a TOML config (per-seed run directories)
  eval     compute metrics of a checkpoint on fresh episodes
  replay   dump JSON-lines episode traces of a checkpoint's policy
  report   milestone summary and selection-frequency table for a run dir
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from .harness import (
    ConfigError,
    RunConfig,
    Trainer,
    evaluate_checkpoint,
    load_checkpoint,
    replay_checkpoint,
    selection_frequency_table,
    summarize_run,
)

OUT_ROOT_ENV = "ERPBPNN_OUT_ROOT"


def _add_train(sub):
    p = sub.add_parser("train", help="run training")
    p.add_argument("--config", type=Path, default=None, help="TOML config file")
    p.add_argument("--seed", type=int, default=None, help="override config seeds with one seed")
    p.add_argument("--method", default=None, help="override the configured method")
    p.add_argument("--budget", type=int, default=None, help="override the episode budget")
    p.add_argument("--out", type=Path, default=None, help="output directory root")


def _add_eval(sub):
    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--episodes", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stochastic", action="store_true",
                   help="sample actions instead of using the policy mean")
    p.add_argument("--out", type=Path, default=None, help="write metrics JSON here")


def _add_replay(sub):
    p = sub.add_parser("replay", help="dump episode traces of a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="JSON-lines output path")
    p.add_argument("--episodes", type=int, default=1, help="episodes per task")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stochastic", action="store_true")


def _add_report(sub):
    p = sub.add_parser("report", help="summarize a finished run directory")
    p.add_argument("--run-dir", type=Path, required=True)
    p.add_argument("--milestones", default=None,
                   help="comma-separated episode milestones (default: standard schedule)")
    p.add_argument("--window", type=int, default=35,
                   help="iteration window for selection frequencies")
    p.add_argument("--out", type=Path, default=None,
                   help="directory for report files (default: <run-dir>/report)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="erpbpnn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    _add_train(sub)
    _add_eval(sub)
    _add_replay(sub)
    _add_report(sub)
    return parser


def _cmd_train(args) -> int:
    if args.config is not None:
        cfg = RunConfig.from_toml(args.config)
    else:
        cfg = RunConfig()
    overrides = {}
    if args.method is not None:
        overrides["method"] = args.method
    if args.budget is not None:
        overrides["budget_episodes"] = args.budget
    if args.seed is not None:
        overrides["seeds"] = [args.seed]
    if overrides:
        data = cfg.resolved()
        data.update(overrides)
        cfg = RunConfig.from_dict(data)
    out_root = args.out or Path(os.environ.get(OUT_ROOT_ENV, cfg.out_root))
    for seed in cfg.seeds:
        out_dir = out_root / f"seed_{seed}"
        summary = Trainer(cfg, seed, out_dir).run()
        print(
            f"{cfg.method} seed {seed}: {summary['iterations']} iterations, "
            f"{summary['episodes_counted']} episodes -> {out_dir}"
        )
    return 0


def _cmd_eval(args) -> int:
    doc = load_checkpoint(args.checkpoint)
    result = evaluate_checkpoint(
        doc, episodes=args.episodes, seed=args.seed, stochastic=args.stochastic
    )
    text = json.dumps(result, indent=2)
    if args.out is not None:
        args.out.write_text(text + "\n")
    print(text)
    return 0


def _cmd_replay(args) -> int:
    doc = load_checkpoint(args.checkpoint)
    n = replay_checkpoint(
        doc, args.out, episodes=args.episodes, seed=args.seed,
        stochastic=args.stochastic,
    )
    print(f"wrote {n} step records to {args.out}")
    return 0


def _cmd_report(args) -> int:
    milestones = None
    if args.milestones:
        milestones = [int(v) for v in str(args.milestones).split(",") if v]
    summary = summarize_run(args.run_dir, milestones)
    out_dir = args.out or (args.run_dir / "report")
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    freq_sources = sorted(args.run_dir.glob("seed_*")) or [args.run_dir]
    for src in freq_sources:
        if not (src / "scheduler.csv").exists():
            continue
        header, rows = selection_frequency_table(src, nu=args.window)
        name = "selection_frequency.csv" if src == args.run_dir else f"selection_frequency_{src.name}.csv"
        with open(out_dir / name, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
    for entry in summary["milestones"]:
        br = entry["best_return"]
        bd = entry["best_distance"]
        print(
            f"episodes {entry['episodes']}: return {br['mean']:.3f} +- {br['std']:.3f}, "
            f"distance {bd['mean']:.4f} +- {bd['std']:.4f} ({entry['n_seeds']} seeds)"
        )
    print(f"report written to {out_dir}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "train": _cmd_train,
        "eval": _cmd_eval,
        "replay": _cmd_replay,
        "report": _cmd_report,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
