#!/usr/bin/env python3
"""Run one experiment config and print its result table.

    python3 scripts/run_grid.py configs/ablation.json --output-dir /tmp/ablation
"""
import argparse
import sys
from pathlib import Path

from smtl.harness import ExperimentConfig, run_experiment


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("config", type=Path)
    parser.add_argument("--output-dir", type=Path)
    parser.add_argument("--workers", type=int)
    args = parser.parse_args()

    cfg = ExperimentConfig.load(args.config)
    if args.output_dir:
        cfg.output_dir = args.output_dir.resolve()
    if args.workers:
        cfg.workers = args.workers
    outcome = run_experiment(cfg)
    print(outcome.table_markdown)
    print(f"artifacts in {cfg.output_dir}")
    for failed in outcome.failures:
        print(f"FAILED {failed.spec.dirname}: {failed.error.splitlines()[0]}", file=sys.stderr)
    return 2 if outcome.failures else 0


if __name__ == "__main__":
    sys.exit(main())
