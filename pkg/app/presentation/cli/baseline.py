from __future__ import annotations

import argparse
from typing import List

import pandas as pd

from app.application.dto.metrics import CRPSSummary
from app.application.services.experiment_service import ExperimentService
from app.core.exceptions import ValidationException
from app.presentation.cli.common import add_common_arguments, build_context, load_instances, read_sidecar

SEED_FIELD = "eval.seed"


def register(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser(
        "baseline", help="score the untrained network, persistence and zero-field baselines on the same instances"
    )
    add_common_arguments(parser)
    parser.add_argument("--targets", metavar="PATH", required=True, help="targets container written by sample")
    parser.add_argument("--k", type=int, help="members for the untrained-network ensemble")
    parser.set_defaults(handler=run)
    return parser


def run(args: argparse.Namespace, argv: List[str]) -> int:
    # the targets sidecar carries the normalization the instances were sampled with
    source = read_sidecar(args.targets)
    if source.stats is None:
        raise ValidationException(f"{args.targets} has no normalization statistics in its sidecar")
    ctx = build_context(args, argv, SEED_FIELD, {"eval.k": args.k}, base=source.run_config)
    instances = load_instances(ctx, args.targets)
    stats = source.stats.to_stats()
    reports = ExperimentService(ctx.config).baselines(stats, instances)

    rows = [
        {"baseline": name, "crps": r.aggregate, "mse": r.mse, "k": r.k, "n_instances": len(r.per_instance)}
        for name, r in reports.items()
    ]
    checksums = {
        "baselines.csv": ctx.reports.save_table(pd.DataFrame(rows), ctx.path("baselines.csv")),
    }
    for name, r in reports.items():
        fname = f"baseline_{name}.json"
        checksums[fname] = ctx.reports.save(CRPSSummary.from_report(r), ctx.path(fname))
    ctx.write_sidecar("baselines", ctx.path("baselines.csv"), checksums, stats=stats)
    ctx.emit(artifact=str(ctx.path("baselines.csv")), **{name: r.aggregate for name, r in reports.items()})
    return 0

