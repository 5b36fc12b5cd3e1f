from __future__ import annotations

import argparse
from typing import List

from app.application.services.experiment_service import (
    ExperimentService,
    ensembles_to_container,
    instance_records,
    instances_to_container,
)
from app.domain.models.training import Task
from app.presentation.cli.common import (
    ENSEMBLES_FILE,
    TARGETS_FILE,
    add_common_arguments,
    build_context,
    check_masks_cover,
    pairs_from_container,
    read_checkpoint,
    splits,
)

SEED_FIELD = "eval.seed"


def register(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("sample", help="draw K-member conditional ensembles on held-out instances")
    add_common_arguments(parser)
    parser.add_argument("--checkpoint", metavar="PATH", required=True)
    parser.add_argument("--data", metavar="PATH", required=True, help="dataset container")
    parser.add_argument("--masks", metavar="PATH", required=True, help="mask container")
    parser.add_argument("--k", type=int, help="ensemble members per instance")
    parser.add_argument("--n-instances", type=int)
    parser.add_argument("--task", choices=[t.value for t in Task])
    parser.set_defaults(handler=run)
    return parser


def run(args: argparse.Namespace, argv: List[str]) -> int:
    ckpt = read_checkpoint(args.checkpoint)
    ctx = build_context(
        args,
        argv,
        SEED_FIELD,
        {"eval.k": args.k, "eval.n_instances": args.n_instances, "eval.task": args.task},
        base=ckpt.run_config,
    )
    ctx.record_input(args.checkpoint)
    dataset = ctx.load_container(args.data)
    pairs = pairs_from_container(ctx.load_container(args.masks))
    check_masks_cover(dataset, pairs)
    _, held_out = splits(dataset)

    experiments = ExperimentService(ctx.config)
    instances = experiments.instances(held_out, pairs)
    ensembles = experiments.sample(ckpt.params, ckpt.stats, instances)

    targets_path = ctx.path(TARGETS_FILE)
    ensembles_path = ctx.path(ENSEMBLES_FILE)
    checksums = {
        TARGETS_FILE: ctx.containers.save(instances_to_container(instances), targets_path),
        ENSEMBLES_FILE: ctx.containers.save(ensembles_to_container(ensembles), ensembles_path),
    }
    records = instance_records(instances)
    for rec, ens in zip(records, ensembles):
        rec["member_seeds"] = [list(key) for key in ens.member_seeds]
    ctx.write_sidecar("ensembles", ensembles_path, checksums, stats=ckpt.stats, instances=records)
    ctx.write_sidecar("targets", targets_path, checksums, stats=ckpt.stats, instances=instance_records(instances))
    ctx.emit(artifact=str(ensembles_path), targets=str(targets_path), k=ctx.config.eval.k, n_instances=len(instances))
    return 0

