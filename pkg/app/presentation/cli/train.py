from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path
from typing import List, Optional

from app.application.dto.metrics import MetricsLogLine
from app.application.services.training_service import TrainingService, prepare_training_data
from app.domain.models.denoiser import DenoiserParams
from app.domain.models.training import Checkpoint, OptimState, StepMetrics
from app.domain.nn.unet import init_params
from app.presentation.cli.common import (
    CHECKPOINT_FILE,
    add_common_arguments,
    build_context,
    check_masks_cover,
    pairs_from_container,
    read_checkpoint,
    splits,
)

logger = logging.getLogger(__name__)

SEED_FIELD = "optimizer.seed"
METRICS_FILE = "metrics.jsonl"


def register(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("train", help="fit the denoiser with the dual-masked loss (resumable)")
    add_common_arguments(parser)
    parser.add_argument("--data", metavar="PATH", required=True, help="dataset container")
    parser.add_argument("--masks", metavar="PATH", required=True, help="mask container")
    parser.add_argument("--steps", type=int, help="total optimizer steps")
    parser.add_argument("--lam", type=float, help="overlap weight lambda")
    parser.add_argument("--resume", metavar="PATH", help="checkpoint to resume from (default: OUT/checkpoint.sfdc if present)")
    parser.add_argument("--fresh", action="store_true", help="ignore an existing checkpoint in OUT")
    parser.set_defaults(handler=run)
    return parser


def _resume_path(args: argparse.Namespace) -> Optional[Path]:
    if args.resume:
        return Path(args.resume)
    default = Path(args.out) / CHECKPOINT_FILE
    if not args.fresh and default.is_file():
        return default
    return None


def _previous_lines(path: Path, upto: int) -> List[str]:
    """Metric lines already logged up to the resumed step."""
    if not path.is_file():
        return []
    lines = []
    for raw in path.read_text(encoding="utf-8").splitlines():
        if raw.strip() and json.loads(raw)["step"] <= upto:
            lines.append(raw)
    return lines


def run(args: argparse.Namespace, argv: List[str]) -> int:
    resume = _resume_path(args)
    previous: Optional[Checkpoint] = read_checkpoint(resume) if resume else None
    ctx = build_context(
        args,
        argv,
        SEED_FIELD,
        {"optimizer.steps": args.steps, "loss.lam": args.lam},
        base=previous.run_config if previous else None,
    )
    if resume:
        ctx.record_input(resume)
    dataset = ctx.load_container(args.data)
    pairs = pairs_from_container(ctx.load_container(args.masks))
    check_masks_cover(dataset, pairs)
    train_fields, _ = splits(dataset)
    data = prepare_training_data(train_fields, pairs, ctx.config.loss.data_fraction)

    service = TrainingService(ctx.config)
    params: DenoiserParams = init_params(ctx.config.net)
    state: Optional[OptimState] = None
    if previous is not None:
        params, state = previous.params, previous.state
        logger.info("resuming from %s at step %d", resume, state.step)

    ckpt_path = ctx.path(CHECKPOINT_FILE)
    metrics_path = ctx.path(METRICS_FILE)
    lines = _previous_lines(metrics_path, state.step if state else 0)
    config_doc = ctx.config.model_dump(mode="json")
    checksums = {}

    def on_step(m: StepMetrics) -> None:
        lines.append(MetricsLogLine.from_metrics(m).model_dump_json())

    def on_checkpoint(p: DenoiserParams, s: OptimState) -> None:
        checksums[CHECKPOINT_FILE] = ctx.checkpoints.save(Checkpoint(p, s, data.stats, config_doc), ckpt_path)
        ctx.reports.write_text(metrics_path, "\n".join(lines) + "\n")

    result = service.fit(params, data, state=state, on_step=on_step, on_checkpoint=on_checkpoint)
    if CHECKPOINT_FILE not in checksums:
        on_checkpoint(result.params, result.state)
    ctx.write_sidecar(
        "checkpoint",
        ckpt_path,
        checksums,
        stats=data.stats,
        diagnostics={"step": result.state.step, "n_params": result.params.count},
        deviations=ctx.config.net.deviations(),
    )
    last = result.history[-1].loss if result.history else None
    ctx.emit(artifact=str(ckpt_path), checksum=checksums[CHECKPOINT_FILE], step=result.state.step, loss=last)
    return 0
