"""Command-line entry point: ``simulate <config> [--out DIR] [--parallel N]``.

Exit codes: 0 success, 1 convergence failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import ConfigError, parse_config_file
from .output import OutputError, ensure_directory
from .runner import EXIT_CONFIG, EXIT_CONVERGENCE, OUTPUT_DIR_ENV, run


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="simulate",
        description="Electro-thermal drift-diffusion device simulation runner.")
    parser.add_argument("config", help="run-plan YAML file")
    parser.add_argument("--out", default=None,
                        help=f"output directory (default: ${OUTPUT_DIR_ENV} "
                             "or the plan's output_dir)")
    parser.add_argument("--parallel", type=int, default=1, metavar="N",
                        help="run independent experiments on N workers")
    parser.add_argument("--log-level", default="INFO", metavar="L",
                        help="logging level (DEBUG, INFO, WARNING, ERROR)")
    return parser


def _setup_logging(level: str, out_dir: str | None) -> None:
    root = logging.getLogger("thermodd")
    root.setLevel(getattr(logging, level.upper(), logging.INFO))
    root.handlers = []
    fmt = logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s")
    stream = logging.StreamHandler(sys.stderr)
    stream.setFormatter(fmt)
    root.addHandler(stream)
    if out_dir is not None:
        file_handler = logging.FileHandler(os.path.join(out_dir, "run.log"),
                                           mode="w", encoding="utf-8")
        file_handler.setFormatter(fmt)
        root.addHandler(file_handler)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        plan = parse_config_file(args.config)
    except FileNotFoundError:
        print(f"error: config file not found: {args.config}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    if args.parallel < 1:
        print("error: --parallel must be >= 1", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = args.out or os.environ.get(OUTPUT_DIR_ENV) or plan.output_dir
    try:
        ensure_directory(out_dir)
    except OutputError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    _setup_logging(args.log_level, out_dir)
    try:
        return run(plan, out_dir=out_dir, parallel=args.parallel)
    except OutputError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
