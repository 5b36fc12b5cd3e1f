from __future__ import annotations

import argparse
from typing import List

import pandas as pd

from app.application.dto.metrics import CRPSSummary
from app.application.services.experiment_service import ExperimentService
from app.application.services.inference_service import uncertainty_map
from app.presentation.cli.common import (
    add_common_arguments,
    artifact_config,
    build_context,
    load_ensembles,
    load_instances,
)

SEED_FIELD = "eval.seed"


def register(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("evaluate", help="score ensembles with CRPS and MSE on the target mask")
    add_common_arguments(parser)
    parser.add_argument("--ensembles", metavar="PATH", required=True)
    parser.add_argument("--targets", metavar="PATH", required=True)
    parser.add_argument("--maps", type=int, default=3, help="instances to export error/uncertainty PNGs for")
    parser.set_defaults(handler=run)
    return parser


def run(args: argparse.Namespace, argv: List[str]) -> int:
    ctx = build_context(args, argv, SEED_FIELD, base=artifact_config(args.ensembles))
    instances = load_instances(ctx, args.targets)
    ensembles = load_ensembles(ctx, args.ensembles, instances)
    report = ExperimentService(ctx.config).score([e.members for e in ensembles], instances)

    table = pd.DataFrame(
        {
            "instance": range(len(instances)),
            "trajectory": [inst.trajectory for inst in instances],
            "frame": [inst.frame for inst in instances],
            "task": [inst.task.value for inst in instances],
            "crps": report.per_instance,
            "mse": report.per_instance_mse,
            "target_pixels": report.pixel_counts,
        }
    )
    checksums = {
        "crps.csv": ctx.reports.save_table(table, ctx.path("crps.csv")),
        "crps.json": ctx.reports.save(CRPSSummary.from_report(report), ctx.path("crps.json")),
    }
    for i, (inst, ens) in enumerate(zip(instances[: args.maps], ensembles)):
        error_name = f"error_{i:03d}.png"
        checksums[error_name] = ctx.reports.save_png16(ens.mean - inst.target, ctx.path(error_name), "mean - truth")
        if ens.k >= 2:
            sigma_name = f"sigma_{i:03d}.png"
            checksums[sigma_name] = ctx.reports.save_png16(
                uncertainty_map(ens).sigma, ctx.path(sigma_name), "ensemble std"
            )
    ctx.write_sidecar("evaluation", ctx.path("crps.csv"), checksums)
    ctx.emit(artifact=str(ctx.path("crps.json")), crps=report.aggregate, mse=report.mse, k=report.k)
    return 0
