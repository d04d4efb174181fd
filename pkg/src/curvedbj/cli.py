"""Command-line interface.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical-quality
failure (a check on a computed result did not pass).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import WorkbenchConfig
from .errors import NumericalQualityError, ValidationError
from .pipeline import STAGES, StageFailure, export_plots, run_stages

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3

COMMANDS = {
    "verify-transform": ("transform",),
    "cell": ("cell",),
    "bl": ("bl",),
    "effective": ("effective",),
    "dns": ("dns",),
    "sweep": ("sweep",),
    "pipeline": STAGES,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="curvedbj", description="Effective interface laws over curved porous beds.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, stages in COMMANDS.items():
        p = sub.add_parser(name, help=f"run stage(s) {', '.join(stages)} and their prerequisites")
        p.add_argument("--config", type=Path, help="JSON configuration (defaults when omitted)")
        p.add_argument("--out", type=Path, default=Path("artifacts"), help="artifact directory")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for independent units")
        p.add_argument("--deep-strip", action="store_true", help="double the boundary-layer strip truncation")
        p.add_argument("--fine", action="store_true", help="halve every mesh size")
        p.add_argument("-v", "--verbose", action="store_true")
    p = sub.add_parser("export-plots", help="write plot data series from an artifact directory")
    p.add_argument("--out", type=Path, default=Path("artifacts"), help="artifact directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _config(args) -> WorkbenchConfig:
    cfg = WorkbenchConfig.load(args.config) if args.config else WorkbenchConfig()
    if args.jobs < 1:
        raise ValidationError("--jobs must be at least 1")
    if args.deep_strip:
        cfg = cfg.deep_strip()
    if args.fine:
        cfg = cfg.fine()
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "export-plots":
            for path in export_plots(args.out):
                print(path)
            return EXIT_OK
        cfg = _config(args)
        for r in run_stages(cfg, args.out, COMMANDS[args.command], args.jobs):
            print(f"{r.stage:10s} {r.status:7s} {r.seconds:8.1f} s")
        return EXIT_OK
    except StageFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID if isinstance(exc.cause, ValidationError) else EXIT_NUMERICAL
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalQualityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
