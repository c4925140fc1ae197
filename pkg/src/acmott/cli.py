"""Command-line entry point: ``acmott <subcommand> [--config FILE] [--key value ...]``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .config import COMMANDS, ConfigError, ExperimentConfig
from .runner import EXIT_NUMERICAL, EXIT_VALIDATION, NumericalFailure, run
from .spectral import DiagonalizationError
from .diagnostics import SolverBreakdown


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="acmott",
        description="Finite-volume ac-conductivity estimators and diagnostics for the Anderson model.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="flat 'key = value' config file")
        for f in fields(ExperimentConfig):
            if f.name == "command":
                continue
            p.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, default=None,
                           metavar="VALUE")
        p.add_argument("--print-config", action="store_true",
                       help="print the canonical config and exit")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    overrides = {f.name: getattr(args, f.name) for f in fields(ExperimentConfig)
                 if f.name != "command" and getattr(args, f.name) is not None}
    overrides["command"] = args.command
    try:
        text = args.config.read_text() if args.config else ""
        cfg = ExperimentConfig.from_text(text, **overrides)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_VALIDATION
    if args.print_config:
        sys.stdout.write(cfg.canonical())
        return 0
    try:
        res, paths = run(cfg)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalFailure, DiagonalizationError, SolverBreakdown) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return res.exit_code


if __name__ == "__main__":
    sys.exit(main())
