#!/usr/bin/env python3
"""Summarise a finished run: label divergence, semantic divergence and final alpha.

    python3 scripts/relation_report.py results/label_shift/runs/smtl__rho0.6__seed0
"""
import argparse

import numpy as np

from smtl.harness import diagnostics


def show(title, matrix, names):
    print(title)
    print("        " + " ".join(f"{n:>8}" for n in names))
    for n, row in zip(names, np.asarray(matrix)):
        print(f"{n:>8}" + " ".join(f"{v:8.4f}" for v in row))
    print()


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("run_dir")
    args = parser.parse_args()
    rep = diagnostics(args.run_dir)
    names = rep["tasks"]
    show("label JS (nats)", rep["divergence"]["label_js"], names)
    show("semantic divergence E", rep["divergence"]["semantic_E"], names)
    show("alpha (row t: weight on task i)", rep["alpha_final"], names)
    print(f"alpha change in the last epoch: {rep['alpha_final_change']:.2e}")


if __name__ == "__main__":
    main()
