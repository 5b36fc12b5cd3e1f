from __future__ import annotations

from app.core.config import settings
from app.presentation.cli import (
    baseline,
    calibrate,
    evaluate,
    masks,
    replay,
    rollout,
    sample,
    simulate,
    sweep,
    train,
)
from app.presentation.cli.common import CliParser

COMMANDS = (simulate, masks, train, sample, rollout, evaluate, calibrate, baseline, sweep, replay)


def build_parser() -> CliParser:
    parser = CliParser(prog="sfd", description=f"{settings.PROJECT_NAME} {settings.VERSION}")
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)
    for command in COMMANDS:
        command.register(subparsers)
    parser.set_defaults(root_parser=parser)
    return parser
