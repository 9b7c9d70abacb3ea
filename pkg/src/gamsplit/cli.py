"""Command line entry point.

Subcommands:
  run          execute the configured experiment
  sweep        cartesian sweep over the config's grid section
  mc-baseline  direct Monte Carlo with the same model config
  diagnose     re-aggregate a summary from an existing per-run CSV

Exit codes: 0 success, 2 config error, 3 run-time error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import diagnostics, harness


def _add_common(p):
    p.add_argument("--config", required=True, help="path to the JSON config")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config's master seed")
    p.add_argument("--jobs", type=int, default=None,
                   help="parallelism degree (independent runs)")
    p.add_argument("--out", default="out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gamsplit",
        description="Adaptive multilevel splitting experiment harness")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "sweep", "mc-baseline"):
        _add_common(sub.add_parser(name))
    diag = sub.add_parser("diagnose")
    diag.add_argument("--runs-csv", required=True,
                      help="per-run CSV produced by a previous run")
    diag.add_argument("--out", default=None,
                      help="write summary.json here instead of stdout")
    diag.add_argument("--partial-n0", type=int, default=100)
    return parser


def _load(args):
    with open(args.config) as fh:
        raw = json.load(fh)
    if args.seed is not None:
        raw["seed"] = args.seed
    return raw


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "diagnose":
            records = diagnostics.read_runs_csv(args.runs_csv)
            summary = diagnostics.summary_dict(records, partial_n0=args.partial_n0)
            if args.out:
                out = Path(args.out)
                out.mkdir(parents=True, exist_ok=True)
                diagnostics.write_summary_json(out / "summary.json", summary)
            else:
                json.dump(summary, sys.stdout, indent=2, sort_keys=True)
                print()
            return 0

        raw = _load(args)
        if args.command == "sweep":
            harness.sweep(raw, args.out, jobs=args.jobs)
            return 0
        if args.command == "mc-baseline":
            raw["algorithm"] = "direct-mc"
        cfg = harness.parse_config(raw)
        harness.run_experiment(cfg, args.out, jobs=args.jobs)
        return 0
    except (harness.ConfigError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"run-time error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
