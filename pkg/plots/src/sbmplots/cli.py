"""CLI: render figures from spec JSON files.

A spec file holds either one figure spec object or a list of them. Exits
nonzero (with a descriptive message) when inputs are missing columns or empty,
and emits no image in that case.
"""
from __future__ import annotations

import argparse
import json
import sys

from .figures import ColumnError, EmptyInputError, FigureSpec, render
from .refconstants import ConstantsError


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="sbmlab-plots",
        description="render figures from sbmlab CSV artifacts")
    sub = parser.add_subparsers(dest="command")
    sp = sub.add_parser("render", help="render figure spec(s)")
    sp.add_argument("--spec", required=True, help="JSON spec file")
    sp.add_argument("--quiet", action="store_true")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    if args.command != "render":
        parser.print_help()
        return 2
    try:
        with open(args.spec) as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cannot read spec: {exc}", file=sys.stderr)
        return 2
    specs = payload if isinstance(payload, list) else [payload]
    try:
        for entry in specs:
            out = render(FigureSpec.from_dict(entry))
            if not args.quiet:
                print(f"wrote {out}")
    except (ColumnError, EmptyInputError, ConstantsError, ValueError) as exc:
        print(f"render error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
