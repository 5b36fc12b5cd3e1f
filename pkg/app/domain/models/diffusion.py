from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from pydantic import model_validator

from app.domain.models.base import ConfigModel, chosen, paper


class DiffusionConfig(ConfigModel):
    T: int = paper(1000, "total diffusion steps", ge=1)
    beta_start: float = chosen(1e-4, "canonical DDPM linear schedule", gt=0, lt=1)
    beta_end: float = chosen(0.02, "canonical DDPM linear schedule", gt=0, lt=1)
    ddim_steps: int = paper(50, "DDIM sampling steps", ge=1)
    eta: float = chosen(0.0, "deterministic DDIM; ensemble diversity comes from x_T", ge=0, le=0)
    clamp_x0: bool = chosen(False, "z-scored fields are unbounded; a +/-6 sigma clamp is available")
    clamp_value: float = chosen(6.0, "clamp bound for x0 estimates when clamping is on", gt=0)

    @model_validator(mode="after")
    def _check(self) -> "DiffusionConfig":
        if self.beta_end <= self.beta_start and self.T > 1:
            raise ValueError("beta_end must exceed beta_start")
        if self.ddim_steps > self.T:
            raise ValueError(f"ddim_steps ({self.ddim_steps}) exceeds T ({self.T})")
        return self


@dataclass(frozen=True)
class NoiseSchedule:
    """Arrays are indexed by diffusion step tau in 0..T; entry 0 is the clean state (alpha_bar = 1)."""

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def snapshot(self) -> dict:
        return {
            "T": self.T,
            "beta_start": float(self.beta[1]),
            "beta_end": float(self.beta[self.T]),
            "kind": "linear",
        }


@dataclass(frozen=True)
class DDIMPlan:
    n_steps: int
    taus: np.ndarray  # strictly decreasing, in 1..T
    eta: float = 0.0

    def pairs(self):
        """(tau, tau_prev) transitions; the last one lands on the clean state 0."""
        nxt = list(self.taus[1:]) + [0]
        return list(zip((int(t) for t in self.taus), (int(t) for t in nxt)))
