from __future__ import annotations

import argparse
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from app.application.dto.sidecar import ArtifactSidecar, NormStatsRecord
from app.application.services.experiment_service import EvalInstance, instances_from_container
from app.core.cli_error import CliError
from app.core.config import PRESETS, RunConfig, config_provenance, load_run_config, settings
from app.core.exceptions import ValidationException
from app.domain.models.container import FieldContainer
from app.domain.models.inference import Ensemble
from app.domain.models.masks import MaskPair
from app.domain.models.simulation import HELD_OUT_PARITY, TRAIN_PARITY, parity_split
from app.domain.models.training import Checkpoint, NormStats
from app.infrastructure.repositories.base import file_checksum
from app.infrastructure.repositories.checkpoint_repository import CheckpointRepository
from app.infrastructure.repositories.container_repository import ContainerRepository
from app.infrastructure.repositories.report_repository import ReportRepository, sidecar_path

logger = logging.getLogger(__name__)

DATASET_FILE = "dataset.sfd"
MASKS_FILE = "masks.sfd"
CHECKPOINT_FILE = "checkpoint.sfdc"
ENSEMBLES_FILE = "ensembles.sfd"
TARGETS_FILE = "targets.sfd"


class CliParser(argparse.ArgumentParser):
    """Usage errors become a CliError (exit 1) instead of argparse's own exit."""

    def error(self, message: str):
        raise CliError.usage(f"{self.prog}: {message}")


def parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def parse_assignment(raw: str) -> Tuple[str, Any]:
    key, sep, value = raw.partition("=")
    if not sep or not key:
        raise CliError.usage(f"--set expects KEY=VALUE, got '{raw}'")
    return key.strip(), parse_value(value)


def add_common_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", help="JSON run configuration (overrides the preset)")
    parser.add_argument("--preset", choices=sorted(PRESETS), help="named configuration preset")
    parser.add_argument("--seed", type=int, help="seed for this command's random stream")
    parser.add_argument("--out", metavar="DIR", default=settings.DEFAULT_OUTPUT_DIR, help="output directory")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        type=parse_assignment,
        metavar="KEY=VALUE",
        help="dotted configuration override, e.g. optimizer.steps=100 (repeatable)",
    )
    parser.add_argument("--log-level", help="override the LOG_LEVEL setting")


@dataclass
class CommandContext:
    """Resolved configuration, output directory and repositories for one command run."""

    command: str
    argv: List[str]
    args: argparse.Namespace
    config: RunConfig
    seed: int
    out: Path
    containers: ContainerRepository = field(default_factory=ContainerRepository)
    reports: ReportRepository = field(default_factory=ReportRepository)
    checkpoints: CheckpointRepository = field(default_factory=CheckpointRepository)
    inputs: Dict[str, str] = field(default_factory=dict)

    def path(self, name: str) -> Path:
        return self.out / name

    def record_input(self, path: str | Path) -> None:
        self.inputs[str(path)] = file_checksum(path)

    def load_container(self, path: str | Path) -> FieldContainer:
        container = self.containers.load(path)
        self.record_input(path)
        return container

    def write_sidecar(
        self,
        kind: str,
        artifact: Path,
        checksums: Mapping[str, str],
        stats: Optional[NormStats] = None,
        **extra: Any,
    ) -> Path:
        sidecar = ArtifactSidecar(
            kind=kind,
            command=self.command,
            argv=self.argv,
            seed=self.seed,
            preset=self.args.preset,
            run_config=self.config.model_dump(mode="json"),
            provenance=config_provenance(),
            checksums=dict(checksums),
            inputs=dict(self.inputs),
            stats=NormStatsRecord.from_stats(stats) if stats is not None else None,
            **extra,
        )
        path = sidecar_path(artifact)
        self.reports.save(sidecar, path)
        return path

    def emit(self, **summary: Any) -> None:
        """Machine-readable summary of what was written, on stdout."""
        print(json.dumps({"command": self.command, **summary}, sort_keys=True, default=str))


def build_context(
    args: argparse.Namespace,
    argv: Sequence[str],
    seed_field: str,
    overrides: Optional[Mapping[str, Any]] = None,
    base: Optional[Mapping[str, Any]] = None,
) -> CommandContext:
    """Preset, then --config, then command flags, then --set; --seed lands on ``seed_field``.

    ``base`` is the configuration stored in an input artifact. It replaces
    the preset and --config when neither is given, so downstream commands
    inherit the network and diffusion settings they were trained with.
    """
    merged: Dict[str, Any] = {k: v for k, v in (overrides or {}).items() if v is not None}
    merged.update(dict(args.overrides))
    if args.seed is not None:
        merged[seed_field] = args.seed
    if base is not None and args.preset is None and args.config is None:
        config = RunConfig.model_validate(base).with_overrides(merged)
    else:
        config = load_run_config(args.preset, args.config, merged)
    section, _, key = seed_field.partition(".")
    seed = int(getattr(getattr(config, section), key))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    logger.debug("%s: output to %s", args.command, out)
    return CommandContext(args.command, list(argv), args, config, seed, out)


def pairs_from_container(container: FieldContainer) -> List[MaskPair]:
    if not container.has_masks:
        raise ValidationException("container carries no mask section")
    return [
        MaskPair(container.m_i[k], container.m_o[k], int(inst))
        for k, inst in enumerate(container.instance_ids)
    ]


def splits(dataset: FieldContainer) -> Tuple[np.ndarray, np.ndarray]:
    """Train (even frames) and held-out (odd frames) arrays in float64."""
    frames = dataset.frames.astype(np.float64)
    return parity_split(frames, TRAIN_PARITY), parity_split(frames, HELD_OUT_PARITY)


def check_masks_cover(dataset: FieldContainer, pairs: Sequence[MaskPair]) -> None:
    if len(pairs) < dataset.n_traj:
        raise ValidationException(f"{dataset.n_traj} trajectories need mask pairs, got {len(pairs)}")
    if pairs and pairs[0].m_i.shape != dataset.grid:
        raise ValidationException(f"mask grid {pairs[0].m_i.shape} differs from data grid {dataset.grid}")


def read_checkpoint(path: str | Path) -> Checkpoint:
    """Checkpoints are read before the context exists: their run configuration is the base."""
    return CheckpointRepository().load(path)


def read_sidecar(path: str | Path) -> ArtifactSidecar:
    """The sidecar written next to an artifact."""
    return ArtifactSidecar.model_validate(ReportRepository().load(sidecar_path(path)))


def artifact_config(path: str | Path) -> Dict[str, Any]:
    """Run configuration recorded in an artifact's sidecar."""
    return read_sidecar(path).run_config


def load_instances(ctx: CommandContext, path: str | Path) -> List[EvalInstance]:
    container = ctx.load_container(path)
    records = ctx.reports.load(sidecar_path(path)).get("instances", [])
    return instances_from_container(container, records)


def load_ensembles(ctx: CommandContext, path: str | Path, instances: Sequence[EvalInstance]) -> List[Ensemble]:
    container = ctx.load_container(path)
    if container.n_traj != len(instances) or container.grid != instances[0].target.shape:
        raise ValidationException(
            f"ensembles {container.frames.shape} do not line up with {len(instances)} target instances"
        )
    records = ctx.reports.load(sidecar_path(path)).get("instances", [])
    members = container.frames.astype(np.float64)
    out = []
    for i, inst in enumerate(instances):
        seeds = [tuple(s) for s in records[i]["member_seeds"]] if i < len(records) else []
        out.append(Ensemble(members[i], seeds, inst.x_c, inst.masks.m_i))
    return out
