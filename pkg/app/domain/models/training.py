from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional

import numpy as np

from app.domain.models.base import ConfigModel, chosen, paper
from app.domain.models.denoiser import DenoiserParams
from app.domain.models.masks import MaskPair


class Task(str, Enum):
    RECONSTRUCTION = "reconstruction"
    FORECAST = "forecast"


class FillMode(str, Enum):
    ZERO = "zero"
    CONDITIONING = "conditioning"
    NOISE = "noise"


class PreInterp(str, Enum):
    NONE = "none"
    NN = "nn"
    RBF = "rbf"


class LossConfig(ConfigModel):
    lam: float = paper(0.05, "overlap weight lambda; useful range 0.05-0.1", ge=0)
    fill_mode: FillMode = chosen(
        FillMode.ZERO, "unobserved target pixels take the post-normalization mean; never supervised"
    )
    forecast_fraction: float = chosen(0.5, "even mix of forecast and reconstruction examples per batch", ge=0, le=1)
    data_fraction: float = chosen(1.0, "fraction of training trajectories used (data-efficiency study)", gt=0, le=1)
    preinterp: PreInterp = chosen(PreInterp.NONE, "sparse-only conditioning by default; nn/rbf densify X_c")


class OptimConfig(ConfigModel):
    lr: float = paper(2e-4, "peak learning rate of the cosine schedule", gt=0)
    lr_min_ratio: float = chosen(0.01, "cosine floor keeps lr > 0 at the end of the schedule", gt=0, le=1)
    weight_decay: float = paper(1e-4, "decoupled weight decay", ge=0)
    grad_clip: float = paper(1.0, "global gradient max-norm", gt=0)
    beta1: float = chosen(0.9, "standard AdamW moment decay", gt=0, lt=1)
    beta2: float = chosen(0.999, "standard AdamW moment decay", gt=0, lt=1)
    eps: float = chosen(1e-8, "standard AdamW denominator guard", gt=0)
    batch_size: int = paper(64, "examples per step", ge=1)
    steps: int = paper(600_000, "optimizer steps at full scale", ge=1)
    log_every: int = chosen(50, "metrics log cadence", ge=1)
    checkpoint_every: int = chosen(1000, "checkpoint cadence for resume", ge=1)
    seed: int = chosen(0, "training seed; per-step and per-slot streams derive from it")


@dataclass
class TrainExample:
    input_field: np.ndarray
    target_field: np.ndarray
    masks: MaskPair
    task: Task
    trajectory: int = 0
    frame: int = 0


@dataclass(frozen=True)
class NormStats:
    mu: float
    sigma: float

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mu) / self.sigma

    def denormalize(self, z: np.ndarray) -> np.ndarray:
        return z * self.sigma + self.mu


@dataclass
class OptimState:
    """AdamW moments and the step counter."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros_like(cls, flat: np.ndarray) -> "OptimState":
        return cls(np.zeros_like(flat, dtype=np.float64), np.zeros_like(flat, dtype=np.float64), 0)


@dataclass
class StepMetrics:
    step: int
    loss: float
    lr: float
    grad_norm: float
    clipped: bool = False
    batch_fingerprint: Optional[str] = None


@dataclass
class TrainingResult:
    params: DenoiserParams
    state: OptimState
    history: list = field(default_factory=list)


@dataclass
class Checkpoint:
    """Everything needed to resume training or to sample: weights, optimizer state, normalization, config."""

    params: DenoiserParams
    state: OptimState
    stats: NormStats
    run_config: Dict[str, Any] = field(default_factory=dict)
