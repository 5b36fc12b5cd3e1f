from __future__ import annotations

import argparse
from typing import List

import numpy as np

from app.application.dto.metrics import RolloutSummary
from app.application.services.experiment_service import ExperimentService, instance_records
from app.application.services.inference_service import InferenceService
from app.core.seeding import derive_seed
from app.domain.models.container import FieldContainer
from app.domain.models.inference import Reconditioning
from app.presentation.cli.common import (
    add_common_arguments,
    build_context,
    check_masks_cover,
    pairs_from_container,
    read_checkpoint,
    splits,
)

SEED_FIELD = "eval.seed"
ROLLOUT_FILE = "rollout.sfd"


def register(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("rollout", help="autoregressive ensemble forecasts with reconditioning")
    add_common_arguments(parser)
    parser.add_argument("--checkpoint", metavar="PATH", required=True)
    parser.add_argument("--data", metavar="PATH", required=True)
    parser.add_argument("--masks", metavar="PATH", required=True)
    parser.add_argument("--horizon", type=int)
    parser.add_argument("--k", type=int)
    parser.add_argument("--n-instances", type=int)
    parser.add_argument("--reconditioning", choices=[r.value for r in Reconditioning])
    parser.set_defaults(handler=run)
    return parser


def run(args: argparse.Namespace, argv: List[str]) -> int:
    ckpt = read_checkpoint(args.checkpoint)
    ctx = build_context(
        args,
        argv,
        SEED_FIELD,
        {
            "eval.horizon": args.horizon,
            "eval.k": args.k,
            "eval.n_instances": args.n_instances,
            "eval.reconditioning": args.reconditioning,
            "eval.task": "forecast",
        },
        base=ckpt.run_config,
    )
    ctx.record_input(args.checkpoint)
    dataset = ctx.load_container(args.data)
    pairs = pairs_from_container(ctx.load_container(args.masks))
    check_masks_cover(dataset, pairs)
    _, held_out = splits(dataset)

    cfg = ctx.config.eval
    experiments = ExperimentService(ctx.config)
    instances = experiments.instances(held_out, pairs)
    service = experiments.inference(ckpt.params, ckpt.stats)
    blocks = []
    spreads = []
    for i, inst in enumerate(instances):
        # instance i rolls out from its own seed split so instances stay independent
        rollout = service.rollout(inst.x_c, inst.masks.m_i, seed=derive_seed(cfg.seed, i))
        blocks.append(np.concatenate([e.members for e in rollout.ensembles]))  # horizon-major, member-minor
        spreads.append(InferenceService.horizon_spread(rollout))

    growth = float(np.mean([s[-1] > s[0] for s in spreads])) if cfg.horizon > 1 else 0.0
    path = ctx.path(ROLLOUT_FILE)
    checksums = {
        ROLLOUT_FILE: ctx.containers.save(FieldContainer(np.stack(blocks)), path),
        "rollout_spread.png": ctx.reports.save_spread_plot(spreads, ctx.path("rollout_spread.png")),
    }
    summary = RolloutSummary(
        horizon=cfg.horizon, k=cfg.k, reconditioning=cfg.reconditioning.value, mean_sigma=spreads, growth_rate=growth
    )
    checksums["rollout_summary.json"] = ctx.reports.save(summary, ctx.path("rollout_summary.json"))
    ctx.write_sidecar("rollout", path, checksums, stats=ckpt.stats, instances=instance_records(instances))
    ctx.emit(artifact=str(path), horizon=cfg.horizon, growth_rate=growth)
    return 0

