from __future__ import annotations

import argparse
from typing import List

from app.application.services.experiment_service import ExperimentService
from app.core.cli_error import CliError
from app.domain.models.masks import Pattern, Regime, ScenarioSpec
from app.presentation.cli.common import (
    add_common_arguments,
    build_context,
    check_masks_cover,
    pairs_from_container,
    splits,
)

SEED_FIELD = "optimizer.seed"
SWEEP_FILE = "sweep.csv"

DEFAULT_LAMBDAS = "0,0.05,0.5,1"
DEFAULT_SCENARIOS = "random:0.04:instance,random:0.1:instance,random:0.4:instance,random:0.1:global"
DEFAULT_BASE_DIMS = "16,32,64"


def register(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("sweep", help="retrain and evaluate across overlap weights, sparsity scenarios, data or model size")
    add_common_arguments(parser)
    parser.add_argument("--kind", choices=["lambda", "sparsity", "data", "model"], required=True)
    parser.add_argument("--data", metavar="PATH", required=True)
    parser.add_argument("--masks", metavar="PATH", help="mask container (lambda, data and model sweeps)")
    parser.add_argument("--lambdas", default=DEFAULT_LAMBDAS, help="comma-separated overlap weights")
    parser.add_argument(
        "--scenarios",
        default=DEFAULT_SCENARIOS,
        help="comma-separated PATTERN:DENSITY_OR_BLOCKS:REGIME, e.g. block:6:global",
    )
    parser.add_argument(
        "--n-traj",
        dest="n_trajs",
        help="comma-separated training trajectory counts (default: a tenth of the dataset, then all of it)",
    )
    parser.add_argument("--base-dims", default=DEFAULT_BASE_DIMS, help="comma-separated denoiser base widths")
    parser.set_defaults(handler=run)
    return parser


def parse_lambdas(raw: str) -> List[float]:
    try:
        return [float(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise CliError.usage(f"--lambdas expects comma-separated numbers, got '{raw}'")


def parse_ints(flag: str, raw: str) -> List[int]:
    try:
        values = [int(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise CliError.usage(f"{flag} expects comma-separated integers, got '{raw}'")
    if not values:
        raise CliError.usage(f"{flag} is empty")
    return values


def parse_scenarios(raw: str, base: ScenarioSpec) -> List[ScenarioSpec]:
    scenarios = []
    for item in (s.strip() for s in raw.split(",")):
        if not item:
            continue
        parts = item.split(":")
        if len(parts) != 3:
            raise CliError.usage(f"scenario '{item}' is not PATTERN:VALUE:REGIME")
        pattern, value, regime = parts
        try:
            update = {"pattern": Pattern(pattern), "regime": Regime(regime)}
            if update["pattern"] == Pattern.BLOCK:
                update["n_blocks"] = int(value)
            else:
                update["density"] = float(value)
        except ValueError:
            raise CliError.usage(f"scenario '{item}' has an unknown pattern, regime or value")
        scenarios.append(ScenarioSpec.model_validate({**base.model_dump(), **update}))
    return scenarios


def run(args: argparse.Namespace, argv: List[str]) -> int:
    ctx = build_context(args, argv, SEED_FIELD)
    dataset = ctx.load_container(args.data)
    train_fields, held_out = splits(dataset)
    experiments = ExperimentService(ctx.config)
    if args.kind == "sparsity":
        scenarios = parse_scenarios(args.scenarios, ctx.config.scenario)
        table = experiments.sparsity_sweep(train_fields, held_out, scenarios)
    else:
        if not args.masks:
            raise CliError.usage(f"sweep --kind {args.kind} needs --masks")
        pairs = pairs_from_container(ctx.load_container(args.masks))
        check_masks_cover(dataset, pairs)
        if args.kind == "lambda":
            table = experiments.lambda_sweep(train_fields, held_out, pairs, parse_lambdas(args.lambdas))
        elif args.kind == "data":
            n_total = train_fields.shape[0]
            default = f"{max(1, n_total // 10)},{n_total}"
            table = experiments.data_sweep(train_fields, held_out, pairs, parse_ints("--n-traj", args.n_trajs or default))
        else:
            table = experiments.model_sweep(train_fields, held_out, pairs, parse_ints("--base-dims", args.base_dims))
    path = ctx.path(SWEEP_FILE)
    checksum = ctx.reports.save_table(table, path)
    ctx.write_sidecar("sweep", path, {SWEEP_FILE: checksum}, diagnostics={"kind": args.kind})
    ctx.emit(artifact=str(path), rows=table.to_dict(orient="records"))
    return 0
