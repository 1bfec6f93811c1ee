"""Command-line entry point: ``run``, ``diagnose`` and ``render`` subcommands.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigError
from .harness import ExperimentConfig, diagnostics, render_results_dir, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("smtl")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smtl", description="Multi-task training experiments with label-shift diagnostics.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run every cell of an experiment config")
    run.add_argument("config", help="experiment JSON file")
    run.add_argument("--output-dir", help="override the config's output_dir")
    run.add_argument("--workers", type=int, help="parallel worker processes")

    diag = sub.add_parser("diagnose", help="divergence and alpha report for one run directory")
    diag.add_argument("run_dir")
    diag.add_argument("--out", help="also write the report to this file")

    render = sub.add_parser("render", help="rebuild result tables from a results directory")
    render.add_argument("results_dir")
    return parser


def _run(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.output_dir:
        cfg.output_dir = Path(args.output_dir).resolve()
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError("--workers: must be a positive integer")
        cfg.workers = args.workers
    log.info("running %s into %s", cfg.name, cfg.output_dir)
    outcome = run_experiment(cfg)
    sys.stdout.write(outcome.table_markdown)
    comparison = (outcome.timing or {}).get("comparison")
    if comparison and "smtl_over_vanilla" in comparison:
        print(f"\nepoch time smtl / vanilla: {comparison['smtl_over_vanilla']:.3f}")
    for failure in outcome.failures:
        print(f"run {failure.spec.dirname} failed: {failure.error.splitlines()[0]}", file=sys.stderr)
    return EXIT_RUNTIME if outcome.failures else EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            return _run(args)
        if args.command == "diagnose":
            text = json.dumps(diagnostics(args.run_dir), indent=2, sort_keys=True)
            if args.out:
                with open(args.out, "w", encoding="utf-8") as fh:
                    fh.write(text + "\n")
            print(text)
            return EXIT_OK
        sys.stdout.write(render_results_dir(args.results_dir))
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
