from __future__ import annotations

import argparse
from typing import List

import numpy as np

from app.application.services.mask_service import MaskService
from app.domain.models.container import FieldContainer
from app.domain.models.masks import Pattern, Regime
from app.presentation.cli.common import MASKS_FILE, add_common_arguments, build_context

SEED_FIELD = "scenario.seed"


def register(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("masks", help="draw conditioning/target mask pairs")
    add_common_arguments(parser)
    parser.add_argument("--data", metavar="PATH", help="dataset container; its grid and trajectory count win")
    parser.add_argument("--pattern", choices=[p.value for p in Pattern])
    parser.add_argument("--density", type=float)
    parser.add_argument("--n-blocks", type=int)
    parser.add_argument("--regime", choices=[r.value for r in Regime])
    parser.add_argument("--overlap", type=float, help="share of the budget observed in both masks")
    parser.set_defaults(handler=run)
    return parser


def run(args: argparse.Namespace, argv: List[str]) -> int:
    ctx = build_context(
        args,
        argv,
        SEED_FIELD,
        {
            "scenario.pattern": args.pattern,
            "scenario.density": args.density,
            "scenario.n_blocks": args.n_blocks,
            "scenario.regime": args.regime,
            "scenario.overlap_fraction": args.overlap,
        },
    )
    grid_n, n_traj = ctx.config.simulation.grid_n, ctx.config.simulation.n_traj
    if args.data:
        header = ctx.containers.header(args.data)
        ctx.record_input(args.data)
        grid_n, n_traj = header.height, header.n_traj
    service = MaskService(ctx.config.scenario, grid_n)
    pairs = service.make_pairs(n_traj)
    container = FieldContainer.masks_only(
        np.stack([p.m_i for p in pairs]), np.stack([p.m_o for p in pairs]), [p.instance_id for p in pairs]
    )
    path = ctx.path(MASKS_FILE)
    checksum = ctx.containers.save(container, path)
    counts = [p.counts() for p in pairs]
    ctx.write_sidecar(
        "masks",
        path,
        {MASKS_FILE: checksum},
        diagnostics={"scenario": ctx.config.scenario.label(), "budget": service.budget(), "counts": counts},
    )
    ctx.emit(artifact=str(path), checksum=checksum, scenario=ctx.config.scenario.label(), budget=service.budget())
    return 0
