"""Command-line entry point: ``xelliptic <command> --scenario FILE``.

Exit status: 0 on success, 1 on configuration errors, 2 on numerical
failures (solver stagnation, balls escaping the host domain).
"""
from __future__ import annotations

import argparse
import os
import sys

COMMANDS = ("classify", "capacity", "distance", "greens", "cone", "invariance", "validate")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xelliptic",
                                description="Capacities and boundary regularity for X-elliptic operators.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--scenario", required=True, help="YAML or JSON scenario file")
    p.add_argument("--out", default=None, help="directory for CSV/JSON/binary outputs")
    p.add_argument("--threads", type=int, default=None, help="BLAS/OpenMP thread count")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="override a scenario entry, e.g. wiener.levels=4 (repeatable)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be positive", file=sys.stderr)
            return 1
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)

    # numerical modules are imported after the thread settings take effect
    from .errors import ConfigurationError, GeometryError, MisuseError, NumericalError, \
        RadiusError, XEllipticError
    from .scenario import dumps, load_scenario, run

    try:
        cfg = load_scenario(args.scenario, args.override)
        report = run(args.command, cfg, args.out)
    except (NumericalError, RadiusError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ConfigurationError, GeometryError, MisuseError, XEllipticError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    if args.command == "validate":
        width = max(len(c["check"]) for c in report["checks"])
        for c in report["checks"]:
            print(f"{c['check']:<{width}}  {c['value']:>24}  {'PASS' if c['pass'] else 'FAIL'}")
    else:
        print(dumps(report))
    if args.command == "distance" and any("error" in r for r in report["results"]):
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
