from __future__ import annotations

import argparse
from typing import List

import numpy as np

from app.application.services.simulation_service import SimulationService
from app.domain.models.container import FieldContainer
from app.presentation.cli.common import DATASET_FILE, add_common_arguments, build_context

SEED_FIELD = "grf.seed"


def register(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("simulate", help="generate Navier-Stokes vorticity trajectories")
    add_common_arguments(parser)
    parser.add_argument("--n-traj", type=int, help="number of trajectories")
    parser.add_argument("--grid", type=int, help="grid size N (power of two)")
    parser.add_argument("--frames", type=int, help="saved frames per trajectory")
    parser.set_defaults(handler=run)
    return parser


def run(args: argparse.Namespace, argv: List[str]) -> int:
    ctx = build_context(
        args,
        argv,
        SEED_FIELD,
        {"simulation.n_traj": args.n_traj, "simulation.grid_n": args.grid, "simulation.n_frames": args.frames},
    )
    service = SimulationService(ctx.config.simulation, ctx.config.grf)
    dataset = service.simulate_dataset(seed=ctx.seed)
    frames = np.stack([t.frames for t in dataset.trajectories])
    path = ctx.path(DATASET_FILE)
    checksum = ctx.containers.save(FieldContainer(frames), path)
    diagnostics = dataset.diagnostics()
    diagnostics.update(
        {
            "train_frames": dataset.train_frames,
            "held_out_frames": dataset.held_out_frames,
            "solver": "pseudo-spectral, 2/3 dealiasing, integrating-factor Heun",
        }
    )
    ctx.write_sidecar("dataset", path, {DATASET_FILE: checksum}, diagnostics=diagnostics)
    ctx.emit(artifact=str(path), checksum=checksum, n_traj=frames.shape[0], max_cfl=max(diagnostics["max_cfl"]))
    return 0
