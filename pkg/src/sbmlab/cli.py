"""Command-line entry point.

Subcommands bind config files to registered experiments; `verify` is the
deterministic CI gate (kernel identities, cumulant closed forms, elliptic
profile invariants), `report` re-renders report JSON from existing CSVs
without recomputation. Exit codes: 0 all pass-tier criteria met, 2 pass-tier
failure, 3 usage or config error.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys

from . import cumulants, experiments, kernels, pde
from .experiments import CLAIMS, ConfigError, run_experiment

FAMILIES = {
    "simulate": ["cluster_suite"],
    "localtime": ["renorm_d3", "renorm_d2", "rate", "bad_point", "tanaka"],
    "cumulants": ["cumulant_xcheck"],
    "pde": ["pde_asymptotics", "laplace_xcheck"],
}


def _epilog() -> str:
    lines = ["experiments and the claims they check:"]
    for name in sorted(CLAIMS):
        lines.append(f"  {name:<16} {CLAIMS[name]}")
    return "\n".join(lines)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sbmlab",
        description="simulation and verification lab for occupation densities "
                    "of critical branching diffusions",
        epilog=_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command")

    def common(sp):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int, help="master seed override")
        sp.add_argument("--workers", type=int, help="worker-count override")
        sp.add_argument("--outdir", help="artifact directory (default: out)")
        sp.add_argument("--quiet", action="store_true")

    for fam, names in FAMILIES.items():
        sp = sub.add_parser(fam, help=f"run one of: {', '.join(names)}")
        common(sp)
        sp.add_argument("--experiment", choices=names, default=names[0])
        if fam == "pde":
            sp.add_argument("--lambda", dest="lam", type=float,
                            help="source strength override")
            sp.add_argument("--rmin", type=float, help="inner radius override")

    sp = sub.add_parser("verify", help="deterministic CI gate")
    common(sp)
    sp = sub.add_parser("report", help="re-render report JSON from existing CSVs")
    common(sp)
    sp.add_argument("--experiment", required=False)
    return parser


def _load_config(args, experiment_name: str) -> dict:
    cfg = {"experiment": experiment_name}
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}")
        cfg.setdefault("experiment", experiment_name)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.workers is not None:
        cfg["workers"] = args.workers
    if args.outdir is not None:
        cfg["outdir"] = args.outdir
    elif "outdir" not in cfg:
        cfg["outdir"] = os.environ.get("OUTDIR", "out")
    return cfg


def _run_verify(args) -> int:
    """Deterministic suites only; no Monte Carlo."""
    failures = []

    def check(name, ok):
        print(f"[{'PASS' if ok else 'FAIL'}] {name}")
        if not ok:
            failures.append(name)

    cfg = _load_config(args, "kernel_suite")
    cfg["experiment"] = "kernel_suite"
    rep = run_experiment(cfg)
    check("kernel_suite (identities, inequalities)", rep.verdict == "pass")

    check("catalan sequence", all(
        cumulants.catalan_c(n) == math.comb(2 * n - 2, n - 1) // n
        for n in range(1, 21)))
    t = 1.0
    table = cumulants.v_recursion(
        kernels.KernelDescriptor("CONST", param=1.0, dim=3), t, n_max=3)
    check("constant-kernel closed forms",
          abs(table.value(2, 0.0) - t**3 / 3.0) < 1e-12
          and abs(table.value(3, 0.0) - 2.0 * t**5 / 15.0) < 1e-12)

    pcfg = _load_config(args, "pde_asymptotics")
    pcfg["experiment"] = "pde_asymptotics"
    prep = run_experiment(pcfg)
    check("elliptic profile asymptotics", prep.verdict == "pass")
    if failures and not args.quiet:
        print(f"{len(failures)} deterministic check(s) failed", file=sys.stderr)
    return 2 if failures else 0


def _run_report(args) -> int:
    """Re-render report.json files from artifacts already on disk."""
    outdir = args.outdir or os.environ.get("OUTDIR", "out")
    count = 0
    for root, _dirs, files in os.walk(outdir):
        if "report.json" in files:
            path = os.path.join(root, "report.json")
            with open(path) as fh:
                payload = json.load(fh)
            tables = sorted(f for f in files if f.endswith(".csv"))
            payload["tables"] = tables
            experiments._atomic_write(
                path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
            count += 1
            if not args.quiet:
                print(f"re-rendered {path} ({len(tables)} tables)")
    if count == 0:
        print(f"no reports under {outdir}", file=sys.stderr)
        return 3
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; remap to the documented code
        return 0 if exc.code == 0 else 3
    if args.command is None:
        parser.print_help()
        return 3
    try:
        if args.command == "verify":
            return _run_verify(args)
        if args.command == "report":
            return _run_report(args)
        name = args.experiment
        cfg = _load_config(args, name)
        if cfg.get("experiment") not in FAMILIES[args.command]:
            raise ConfigError(
                f"config experiment {cfg.get('experiment')!r} does not belong "
                f"to subcommand {args.command!r}")
        if args.command == "pde":
            params = cfg.setdefault("params", {})
            if getattr(args, "lam", None) is not None:
                params["lam"] = args.lam
            if getattr(args, "rmin", None) is not None:
                params["r_min"] = args.rmin
        report = run_experiment(cfg)
        if not args.quiet:
            print(f"{report.experiment}: verdict={report.verdict} "
                  f"hash={report.config_hash}")
            for key, val in sorted(report.statistics.items()):
                print(f"  {key}: {val}")
        return 0 if report.verdict in ("pass", "trend", "diagnostic") else 2
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
