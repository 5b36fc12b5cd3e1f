from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Tuple

import numpy as np

from app.domain.models.base import ConfigModel, chosen, paper
from app.domain.models.training import Task


class Reconditioning(str, Enum):
    SELF = "self"
    MEAN = "mean"


class EvalConfig(ConfigModel):
    k: int = paper(100, "ensemble members per conditioning", ge=1)
    task: Task = chosen(Task.FORECAST, "held-out instances pair frame t with t+1; reconstruction scores frame t itself")
    horizon: int = chosen(3, "rollout horizon for the uncertainty-growth probe", ge=1)
    n_instances: int = chosen(50, "held-out instances scored per evaluation", ge=1)
    reconditioning: Reconditioning = chosen(
        Reconditioning.SELF, "each member conditions on its own previous prediction; mean is a variant"
    )
    distance_bins: int = chosen(8, "equal-count bins for the uncertainty vs sensor-distance profile", ge=1)
    rbf_shape: float = chosen(0.0, "0 means the Gaussian length scale is the median nearest-sensor distance", ge=0)
    seed: int = chosen(0, "evaluation seed; member seeds derive from (seed, instance, member)")


@dataclass
class Ensemble:
    """K members sampled under one fixed conditioning (x_c, m_i), in physical units."""

    members: np.ndarray  # (K, H, W)
    member_seeds: List[Tuple[int, ...]]
    x_c: np.ndarray  # (H, W) shared, or (K, H, W) per member after self-reconditioning
    m_i: np.ndarray

    @property
    def k(self) -> int:
        return int(self.members.shape[0])

    @property
    def mean(self) -> np.ndarray:
        return self.members.mean(axis=0)


@dataclass(frozen=True)
class UncertaintyMap:
    sigma: np.ndarray
    mean: np.ndarray


@dataclass(frozen=True)
class RolloutConfig:
    horizon: int
    k: int
    m_i: np.ndarray
    reconditioning: Reconditioning = Reconditioning.SELF


@dataclass
class Rollout:
    ensembles: List[Ensemble] = field(default_factory=list)  # index h-1 holds horizon h
    conditionings: List[np.ndarray] = field(default_factory=list)  # (K, H, W) per horizon
