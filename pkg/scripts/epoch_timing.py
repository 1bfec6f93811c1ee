#!/usr/bin/env python3
"""Mean training-epoch wall time of each mode on the default label-shift fixture."""
import argparse
import json
from pathlib import Path

import numpy as np

from smtl.harness import ExperimentConfig, measure_epoch_times

ROOT = Path(__file__).resolve().parent.parent


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--epochs", type=int, default=10)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--modes", nargs="+", default=["vanilla", "weighted", "smtl"])
    args = parser.parse_args()

    raw = json.loads((ROOT / "configs" / "label_shift.json").read_text())
    raw["timing"] = {"epochs": args.epochs, "modes": args.modes}
    cfg = ExperimentConfig.from_dict(raw, ROOT / "configs")
    runs = [measure_epoch_times(cfg)["mean_epoch_seconds"] for _ in range(args.repeats)]
    vanilla = np.median([r["vanilla"] for r in runs]) if "vanilla" in args.modes else None
    for mode in args.modes:
        sec = float(np.median([r[mode] for r in runs]))
        rel = f"  ({sec / vanilla:.2f}x vanilla)" if vanilla else ""
        print(f"{mode:>9}: {1000 * sec:7.2f} ms/epoch{rel}")


if __name__ == "__main__":
    main()
