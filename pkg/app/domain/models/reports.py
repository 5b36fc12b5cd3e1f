from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional


@dataclass
class RegionScore:
    crps: float
    pixels: int


@dataclass
class CRPSReport:
    per_instance: List[float]
    k: int
    pixel_counts: List[int]
    regions: Dict[str, RegionScore] = field(default_factory=dict)
    per_instance_mse: List[float] = field(default_factory=list)
    dense_truth: bool = False

    @property
    def aggregate(self) -> float:
        if not self.per_instance:
            return float("nan")
        return float(sum(self.per_instance) / len(self.per_instance))

    @property
    def mse(self) -> Optional[float]:
        if not self.per_instance_mse:
            return None
        return float(sum(self.per_instance_mse) / len(self.per_instance_mse))


@dataclass
class CorrelationPair:
    pearson: Optional[float]
    spearman: Optional[float]
    n: int


@dataclass
class DistanceProfile:
    bin_edges: List[float]
    bin_centers: List[float]
    mean_sigma: List[float]
    counts: List[int]
    trend_spearman: Optional[float] = None


@dataclass
class CalibrationReport:
    per_pixel: CorrelationPair
    per_instance: CorrelationPair
    distance: DistanceProfile
    scatter_sigma: List[float] = field(default_factory=list)
    scatter_error: List[float] = field(default_factory=list)

    @property
    def pearson_rho(self) -> Optional[float]:
        return self.per_pixel.pearson

    @property
    def spearman_rho(self) -> Optional[float]:
        return self.per_pixel.spearman
