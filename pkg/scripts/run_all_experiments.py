#!/usr/bin/env python3
"""Run every registered experiment at its default desk scale.

Usage: python scripts/run_all_experiments.py [outdir] [--seed N] [--workers K]

The Monte Carlo experiments take minutes each at the defaults; pass a config
from scripts/configs/ through the CLI instead for other scales.
"""
import argparse
import sys
import time

from sbmlab.experiments import EXPERIMENTS, run_experiment


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("outdir", nargs="?", default="out")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--workers", type=int, default=2)
    parser.add_argument("--only", nargs="*", default=None,
                        help="subset of experiment names")
    args = parser.parse_args()
    names = args.only or sorted(EXPERIMENTS)
    worst = 0
    for name in names:
        t0 = time.time()
        rep = run_experiment({"experiment": name, "seed": args.seed,
                              "workers": args.workers, "outdir": args.outdir})
        print(f"{name:<16} verdict={rep.verdict:<11} "
              f"({time.time() - t0:.0f}s, hash {rep.config_hash})")
        if rep.verdict == "fail":
            worst = 2
    return worst


if __name__ == "__main__":
    sys.exit(main())
