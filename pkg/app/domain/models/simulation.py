from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List

import numpy as np
from pydantic import model_validator

from app.domain.models.base import ConfigModel, chosen, paper

TRAIN_PARITY = 0
HELD_OUT_PARITY = 1


class NSConfig(ConfigModel):
    grid_n: int = paper(64, "per-axis resolution", ge=4)
    reynolds: float = paper(100.0, "Reynolds number, viscosity = 1/Re", gt=0)
    dt: float = chosen(1e-3, "solver substep; stable for the integrating-factor/Heun scheme at Re=100", gt=0)
    frame_interval: float = chosen(
        0.04, "physical time between saved frames; 50 frames span a horizon of 2.0", gt=0
    )
    n_frames: int = paper(50, "saved frames per trajectory", ge=1)
    n_traj: int = chosen(1000, "working-set size that fits a single workstation", ge=1)
    forcing_amplitude: float = paper(-4.0, "f(x1, x2) = A cos(k x2)")
    forcing_wavenumber: int = paper(4, "vertical wavenumber of the forcing", ge=0)
    cfl_limit: float = chosen(1.0, "trajectory aborts when the advective CFL number exceeds this", gt=0)

    @model_validator(mode="after")
    def _check(self) -> "NSConfig":
        if self.grid_n & (self.grid_n - 1):
            raise ValueError(f"grid_n must be a power of two, got {self.grid_n}")
        stride = self.frame_interval / self.dt
        if abs(stride - round(stride)) > 1e-6 * max(1.0, stride) or round(stride) < 1:
            raise ValueError(
                f"frame_interval {self.frame_interval} is not a whole number of dt={self.dt} substeps"
            )
        return self

    @property
    def viscosity(self) -> float:
        return 1.0 / self.reynolds

    @property
    def snapshot_stride(self) -> int:
        return int(round(self.frame_interval / self.dt))


class GRFSpec(ConfigModel):
    alpha: float = paper(2.5, "smoothness exponent", gt=1.0)
    tau_corr: float = paper(3.0, "inverse correlation length", gt=0)
    seed: int = chosen(0, "master seed for initial conditions; per-trajectory streams derive from it")


@dataclass
class Trajectory:
    frames: np.ndarray  # (n_frames, H, W) float64
    config: NSConfig
    seed: int
    index: int = 0
    max_cfl: float = 0.0
    enstrophy: List[float] = field(default_factory=list)

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[0])


@dataclass
class SimulatedDataset:
    trajectories: List[Trajectory]
    train_frames: List[int]
    held_out_frames: List[int]

    def split(self, parity: int) -> np.ndarray:
        """Stack frames of one split: (n_traj, n_split_frames, H, W)."""
        idx = self.train_frames if parity == TRAIN_PARITY else self.held_out_frames
        return np.stack([t.frames[idx] for t in self.trajectories])

    def diagnostics(self) -> Dict[str, Any]:
        return {
            "max_cfl": [t.max_cfl for t in self.trajectories],
            "mean_enstrophy": [float(np.mean(t.enstrophy)) if t.enstrophy else 0.0 for t in self.trajectories],
        }


def parity_split(frames: np.ndarray, parity: int) -> np.ndarray:
    """(n_traj, n_frames, H, W) -> the frames whose index has the given parity."""
    return frames[:, parity::2]
