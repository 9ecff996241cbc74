"""Command line entry point: ``nacplab run <scenario> [--out DIR] [--seed N] [--workers N]``.

Exit codes: 0 all checks pass, 2 invalid configuration, 3 numerical failure,
4 at least one check failed or was indeterminate.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from .errors import NacpError
from .scenario import ConfigError, exit_code, load_scenario, run_checks, write_report

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def build_parser():
    ap = argparse.ArgumentParser(prog="nacplab", description="maximal-regularity laboratory")
    sub = ap.add_subparsers(dest="cmd", required=True)
    run = sub.add_parser("run", help="execute a scenario file")
    run.add_argument("scenario")
    run.add_argument("--out", default=None, help="output directory (overrides out_dir)")
    run.add_argument("--seed", type=int, default=None, help="overrides the scenario seed")
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        sc = load_scenario(args.scenario)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("seed must be nonnegative")
            sc = replace(sc, seed=args.seed)
        if args.workers < 1:
            raise ConfigError("workers must be >= 1")
        results = run_checks(sc, workers=args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NacpError as exc:
        print(f"numerical error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    out = args.out or sc.out_dir
    path = write_report(sc, results, out)
    for r in results:
        print(f"{r.status.upper():13s} {r.name}  ({r.wall_ms:.0f} ms)")
    code = exit_code(results)
    print(f"report: {path}  exit={code}")
    return code


if __name__ == "__main__":
    sys.exit(main())
