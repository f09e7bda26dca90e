"""Command-line entry point: configuration-driven verification suites."""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, load_config
from .experiments import COMMANDS, run_suite


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="memlqr",
        description="Verification suites for the boundary-controlled damped-wave regulator.",
    )
    parser.add_argument("command", choices=list(COMMANDS) + ["all"],
                        help="which suite to run")
    parser.add_argument("--config", required=True, help="INI configuration file")
    parser.add_argument("--out", default=None, help="output directory (overrides the config)")
    parser.add_argument("--seed", type=int, default=None, help="override the data seed")
    parser.add_argument("--tol-scale", type=float, default=1.0,
                        help="multiply every tolerance by this factor")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    outdir = args.out if args.out is not None else cfg.out_dir
    try:
        results = run_suite(args.command, cfg, outdir, seed=args.seed, tol_scale=args.tol_scale)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    failed = 0
    for res in results:
        for row in res.rows:
            status = "pass" if row.passed else "FAIL"
            print(f"[{res.command}] {row.name}: measured={row.measured:.6e} "
                  f"threshold={row.threshold:.6e} {status}")
            failed += 0 if row.passed else 1
    print(f"summary written to {outdir}/summary.csv")
    return 0 if failed == 0 else 1


if __name__ == "__main__":
    sys.exit(main())
