#!/usr/bin/env python3
"""Render the standard figure set from a finished experiment outdir.

Requires the optional sbmlab-plots package (see plots/). The primary suite
never depends on it.
"""
import argparse
import glob
import os
import sys

try:
    from sbmplots.figures import FigureSpec, render
except ImportError:
    print("sbmlab-plots is not installed; `pip install -e plots/` first",
          file=sys.stderr)
    sys.exit(1)

FIGSET = [
    ("renorm_d3", "renorm_d3.csv", "hist_vs_normal", {"column": "aux1"}),
    ("renorm_d3", "variance_regression.csv", "regression", {}),
    ("renorm_d2", "renorm_d2.csv", "paired_trace", {}),
    ("pde_asymptotics", "pde_profile.csv", "ratio_curve", {}),
    ("rate", "rate_summary.csv", "envelope", {}),
]


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("outdir", nargs="?", default="out")
    parser.add_argument("--figdir", default=None)
    args = parser.parse_args()
    figdir = args.figdir or os.path.join(args.outdir, "figures")
    n = 0
    for experiment, csv_name, kind, extra in FIGSET:
        hits = sorted(glob.glob(os.path.join(args.outdir, experiment, "*", csv_name)))
        if not hits:
            print(f"skipping {kind}: no {experiment}/{csv_name} under {args.outdir}")
            continue
        csv = hits[-1]
        constants = os.path.join(os.path.dirname(csv), "constants.json")
        out = os.path.join(figdir, f"{kind}.svg")
        render(FigureSpec(kind=kind, inputs=[csv], output=out,
                          constants_path=constants, **extra))
        print(f"wrote {out}")
        n += 1
    return 0 if n else 1


if __name__ == "__main__":
    sys.exit(main())
