from __future__ import annotations

from typing import Dict, List, Optional

from pydantic import BaseModel

from app.domain.models.reports import CalibrationReport, CorrelationPair, CRPSReport, DistanceProfile
from app.domain.models.training import StepMetrics


class MetricsLogLine(BaseModel):
    """One JSON line of the training metrics log."""

    step: int
    loss: float
    lr: float
    grad_norm: float
    clipped: bool
    batch_fingerprint: Optional[str] = None

    @classmethod
    def from_metrics(cls, m: StepMetrics) -> "MetricsLogLine":
        return cls(
            step=m.step,
            loss=m.loss,
            lr=m.lr,
            grad_norm=m.grad_norm,
            clipped=m.clipped,
            batch_fingerprint=m.batch_fingerprint,
        )


class RegionScoreSummary(BaseModel):
    crps: float
    pixels: int


class CRPSSummary(BaseModel):
    crps: float
    mse: Optional[float] = None
    k: int
    n_instances: int
    dense_truth: bool
    regions: Dict[str, RegionScoreSummary] = {}
    baselines: Dict[str, float] = {}

    @classmethod
    def from_report(cls, report: CRPSReport, baselines: Optional[Dict[str, CRPSReport]] = None) -> "CRPSSummary":
        return cls(
            crps=report.aggregate,
            mse=report.mse,
            k=report.k,
            n_instances=len(report.per_instance),
            dense_truth=report.dense_truth,
            regions={name: RegionScoreSummary(crps=r.crps, pixels=r.pixels) for name, r in report.regions.items()},
            baselines={name: b.aggregate for name, b in (baselines or {}).items()},
        )


class CorrelationSummary(BaseModel):
    pearson: Optional[float] = None
    spearman: Optional[float] = None
    n: int

    @classmethod
    def from_pair(cls, pair: CorrelationPair) -> "CorrelationSummary":
        return cls(pearson=pair.pearson, spearman=pair.spearman, n=pair.n)


class DistanceProfileSummary(BaseModel):
    bin_edges: List[float]
    bin_centers: List[float]
    mean_sigma: List[float]
    counts: List[int]
    trend_spearman: Optional[float] = None

    @classmethod
    def from_profile(cls, p: DistanceProfile) -> "DistanceProfileSummary":
        return cls(
            bin_edges=p.bin_edges,
            bin_centers=p.bin_centers,
            mean_sigma=p.mean_sigma,
            counts=p.counts,
            trend_spearman=p.trend_spearman,
        )


class CalibrationSummary(BaseModel):
    per_pixel: CorrelationSummary
    per_instance: CorrelationSummary
    distance: DistanceProfileSummary

    @classmethod
    def from_report(cls, report: CalibrationReport) -> "CalibrationSummary":
        return cls(
            per_pixel=CorrelationSummary.from_pair(report.per_pixel),
            per_instance=CorrelationSummary.from_pair(report.per_instance),
            distance=DistanceProfileSummary.from_profile(report.distance),
        )


class RolloutSummary(BaseModel):
    horizon: int
    k: int
    reconditioning: str
    mean_sigma: List[List[float]]  # [instance][horizon]
    growth_rate: float  # share of instances whose last-horizon sigma exceeds the first
