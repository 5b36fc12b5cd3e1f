from __future__ import annotations

import logging
from typing import Optional, Tuple

import numpy as np

from app.application.services.base import BaseServiceImpl
from app.core.config import Settings
from app.core.exceptions import NumericalAbortException, ValidationException
from app.domain.interfaces.denoiser import EpsilonPredictor
from app.domain.models.diffusion import DDIMPlan, DiffusionConfig, NoiseSchedule

logger = logging.getLogger(__name__)


def linear_beta_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear betas over tau = 1..T; index 0 holds the clean state."""
    if T < 1:
        raise ValidationException(f"T must be >= 1, got {T}")
    beta = np.concatenate([[0.0], np.linspace(beta_start, beta_end, T)])
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return NoiseSchedule(T, beta, alpha, alpha_bar)


def ddim_plan(T: int, n_steps: int, eta: float = 0.0) -> DDIMPlan:
    if not 1 <= n_steps <= T:
        raise ValidationException(f"ddim steps must be in [1, {T}], got {n_steps}")
    taus = (np.arange(n_steps, 0, -1) * T) // n_steps
    return DDIMPlan(n_steps, taus.astype(np.int64), eta)


def _check_tau(tau: int, schedule: NoiseSchedule) -> None:
    if not 1 <= tau <= schedule.T:
        raise ValidationException(f"tau must be in [1, {schedule.T}], got {tau}")


def forward_noise(
    x0: np.ndarray, tau: int, schedule: NoiseSchedule, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray]:
    """Closed-form q(x_tau | x_0); returns the noised field and the exact noise drawn."""
    _check_tau(tau, schedule)
    eps = rng.standard_normal(x0.shape)
    ab = schedule.alpha_bar[tau]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps, eps


def forward_chain(x0: np.ndarray, tau: int, schedule: NoiseSchedule, rng: np.random.Generator) -> np.ndarray:
    """Iterate the one-step transitions q(x_s | x_{s-1}) for s = 1..tau."""
    _check_tau(tau, schedule)
    x = np.array(x0, dtype=np.float64)
    for s in range(1, tau + 1):
        x = np.sqrt(schedule.alpha[s]) * x + np.sqrt(schedule.beta[s]) * rng.standard_normal(x.shape)
    return x


def predict_x0(x_tau: np.ndarray, eps_hat: np.ndarray, tau: int, schedule: NoiseSchedule) -> np.ndarray:
    ab = schedule.alpha_bar[tau]
    return (x_tau - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)


def renoise(x0_hat: np.ndarray, eps_hat: np.ndarray, tau: int, schedule: NoiseSchedule) -> np.ndarray:
    ab = schedule.alpha_bar[tau]
    return np.sqrt(ab) * x0_hat + np.sqrt(1.0 - ab) * eps_hat


def ddim_sample(
    denoiser: EpsilonPredictor,
    x_c: np.ndarray,
    m_i: np.ndarray,
    schedule: NoiseSchedule,
    plan: DDIMPlan,
    rng: np.random.Generator,
    clamp: Optional[float] = None,
) -> np.ndarray:
    """Deterministic (eta = 0) DDIM; conditioning enters the denoiser at every step."""
    if x_c.shape != m_i.shape:
        raise ValidationException(f"x_c {x_c.shape} and m_i {m_i.shape} differ in shape")
    x = rng.standard_normal(x_c.shape)
    x0_hat = x
    for step, (tau, tau_prev) in enumerate(plan.pairs()):
        eps_hat = np.asarray(denoiser(x, x_c, m_i, tau), dtype=np.float64)
        x0_hat = predict_x0(x, eps_hat, tau, schedule)
        if clamp is not None:
            x0_hat = np.clip(x0_hat, -clamp, clamp)
        if not (np.all(np.isfinite(eps_hat)) and np.all(np.isfinite(x0_hat))):
            raise NumericalAbortException("non-finite sampler state", {"step": step, "tau": tau})
        if tau_prev == 0:
            x = x0_hat
        else:
            x = renoise(x0_hat, eps_hat, tau_prev, schedule)
    return x0_hat


class DiffusionService(BaseServiceImpl[DiffusionConfig]):
    def __init__(self, config: DiffusionConfig, settings: Optional[Settings] = None):
        super().__init__(config, settings)
        self.schedule = linear_beta_schedule(config.T, config.beta_start, config.beta_end)
        self.plan = ddim_plan(config.T, config.ddim_steps, config.eta)
        logger.debug(
            "schedule T=%d, alpha_bar_T=%.3e, ddim steps=%d", config.T, self.schedule.alpha_bar[-1], self.plan.n_steps
        )

    def validate(self, config: DiffusionConfig) -> None:
        if config.eta != 0.0:
            raise ValidationException("only eta = 0 sampling is supported")

    def sample_tau(self, rng: np.random.Generator) -> int:
        return int(rng.integers(1, self.config.T + 1))

    def noise(self, x0: np.ndarray, tau: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        return forward_noise(x0, tau, self.schedule, rng)

    def sample(self, denoiser: EpsilonPredictor, x_c: np.ndarray, m_i: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        clamp = self.config.clamp_value if self.config.clamp_x0 else None
        return ddim_sample(denoiser, x_c, m_i, self.schedule, self.plan, rng, clamp)
