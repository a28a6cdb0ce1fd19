"""Command-line entry point: ``rym <stage> --config <path> [--run-id <id>]
[--mock]``."""

from __future__ import annotations

import argparse
import logging
import sys
from datetime import datetime, timezone

from rym.config import ConfigError, load_config
from rym.pipeline import (
    STAGE_ORDER,
    MissingDependencyError,
    RunLockedError,
    StageError,
    run_all,
    run_stage,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_DEPENDENCY = 3
EXIT_STAGE = 4


def _default_run_id() -> str:
    return datetime.now(timezone.utc).strftime("run-%Y%m%d-%H%M%S")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rym",
        description="Decode a valence trajectory from EEG sessions and render "
        "an affect-conditioned music video from it, stage by stage.",
    )
    parser.add_argument(
        "stage",
        choices=STAGE_ORDER + ("all",),
        help="pipeline stage to run ('all' runs every stage in order)",
    )
    parser.add_argument("--config", required=True, help="path to the YAML config file")
    parser.add_argument("--run-id", default=None, help="run directory name (default: timestamp)")
    parser.add_argument(
        "--mock", action="store_true",
        help="force deterministic offline mock clients regardless of config",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    log = logging.getLogger("rym")
    try:
        loaded = load_config(args.config)
    except ConfigError as err:
        log.error("%s", err)
        return EXIT_CONFIG

    run_id = args.run_id or _default_run_id()
    mock = True if args.mock else None
    try:
        if args.stage == "all":
            run_all(loaded, run_id, mock=mock)
        else:
            run_stage(args.stage, loaded, run_id, mock=mock)
    except MissingDependencyError as err:
        log.error("%s", err)
        return EXIT_DEPENDENCY
    except StageError as err:
        log.error("%s", err)
        return EXIT_STAGE
    except (RunLockedError, ConfigError, ValueError) as err:
        log.error("%s", err)
        return EXIT_CONFIG if isinstance(err, ConfigError) else EXIT_ERROR
    print(f"{args.stage}: ok (run {run_id})")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
