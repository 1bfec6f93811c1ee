#!/usr/bin/env python3
"""Accuracy against label-drift ratio for Vanilla, Weighted and SMTL.

Writes ``drift_sweep.csv`` (variant, drift_ratio, mean/std accuracy) that can
be plotted directly, and prints it.
"""
import argparse
import json
from pathlib import Path

from smtl.harness import ExperimentConfig, run_experiment

ROOT = Path(__file__).resolve().parent.parent


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--ratios", type=float, nargs="+", default=[0.0, 0.2, 0.4, 0.6, 0.8])
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--modes", nargs="+", default=["vanilla", "weighted", "smtl"])
    parser.add_argument("--output-dir", type=Path, default=Path("results/drift_sweep"))
    args = parser.parse_args()

    raw = json.loads((ROOT / "configs" / "drift_sweep.json").read_text())
    raw["grid"].update(modes=args.modes, seeds=args.seeds, drift_ratios=args.ratios)
    raw["output_dir"] = str(args.output_dir.resolve())
    cfg = ExperimentConfig.from_dict(raw, ROOT / "configs")
    run_experiment(cfg)
    print((cfg.output_dir / "drift_sweep.csv").read_text())


if __name__ == "__main__":
    main()
