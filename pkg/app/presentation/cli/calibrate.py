from __future__ import annotations

import argparse
from typing import List

import pandas as pd

from app.application.dto.metrics import CalibrationSummary
from app.application.services.calibration_service import CalibrationService
from app.presentation.cli.common import (
    add_common_arguments,
    artifact_config,
    build_context,
    load_ensembles,
    load_instances,
)

SEED_FIELD = "eval.seed"


def register(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("calibrate", help="relate ensemble spread to error and to sensor distance")
    add_common_arguments(parser)
    parser.add_argument("--ensembles", metavar="PATH", required=True)
    parser.add_argument("--targets", metavar="PATH", required=True)
    parser.add_argument("--bins", type=int, help="equal-count distance bins")
    parser.set_defaults(handler=run)
    return parser


def run(args: argparse.Namespace, argv: List[str]) -> int:
    ctx = build_context(
        args, argv, SEED_FIELD, {"eval.distance_bins": args.bins}, base=artifact_config(args.ensembles)
    )
    instances = load_instances(ctx, args.targets)
    ensembles = load_ensembles(ctx, args.ensembles, instances)
    report = CalibrationService(ctx.config.eval).calibration(
        ensembles,
        [inst.target for inst in instances],
        [inst.masks.m_o for inst in instances],
        [inst.masks.m_i for inst in instances],
    )
    profile = report.distance
    checksums = {
        "calibration.json": ctx.reports.save(CalibrationSummary.from_report(report), ctx.path("calibration.json")),
        "scatter.csv": ctx.reports.save_table(
            pd.DataFrame({"sigma": report.scatter_sigma, "abs_error": report.scatter_error}), ctx.path("scatter.csv")
        ),
        "distance_profile.csv": ctx.reports.save_table(
            pd.DataFrame(
                {
                    "bin_low": profile.bin_edges[:-1],
                    "bin_high": profile.bin_edges[1:],
                    "center": profile.bin_centers,
                    "mean_sigma": profile.mean_sigma,
                    "pixels": profile.counts,
                }
            ),
            ctx.path("distance_profile.csv"),
        ),
        "distance_profile.png": ctx.reports.save_distance_plot(profile, ctx.path("distance_profile.png")),
        "scatter.png": ctx.reports.save_scatter_plot(
            report.scatter_sigma, report.scatter_error, ctx.path("scatter.png")
        ),
    }
    ctx.write_sidecar("calibration", ctx.path("calibration.json"), checksums)
    ctx.emit(
        artifact=str(ctx.path("calibration.json")),
        pixel_spearman=report.per_pixel.spearman,
        instance_spearman=report.per_instance.spearman,
        distance_trend=profile.trend_spearman,
    )
    return 0
