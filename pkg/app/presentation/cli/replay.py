from __future__ import annotations

import argparse
import logging
from typing import List

from app.core.cli_error import CliError
from app.presentation.cli.common import read_sidecar

logger = logging.getLogger(__name__)


def register(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("replay", help="re-run the command recorded in an artifact sidecar")
    parser.add_argument("sidecar", metavar="SIDECAR", help="artifact path or its .json sidecar")
    parser.add_argument("--out", metavar="DIR", required=True, help="output directory for the re-run")
    parser.add_argument("--log-level", help="override the LOG_LEVEL setting")
    parser.set_defaults(handler=run)
    return parser


def with_out(argv: List[str], out: str) -> List[str]:
    """Drop any --out from a recorded command line and point it at ``out``."""
    kept: List[str] = []
    skip = False
    for token in argv:
        if skip:
            skip = False
            continue
        if token == "--out":
            skip = True
            continue
        if token.startswith("--out="):
            continue
        kept.append(token)
    return kept + ["--out", out]


def run(args: argparse.Namespace, argv: List[str]) -> int:
    path = args.sidecar[: -len(".json")] if args.sidecar.endswith(".json") else args.sidecar
    recorded = read_sidecar(path).argv
    if not recorded or recorded[0] == "replay":
        raise CliError.usage(f"{args.sidecar} does not record a replayable command")
    replay_argv = with_out(recorded, args.out)
    logger.info("replaying: %s", " ".join(replay_argv))
    replayed = args.root_parser.parse_args(replay_argv)
    return replayed.handler(replayed, replay_argv)
