from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from app.application.services.base import BaseServiceImpl
from app.core.config import Settings
from app.core.exceptions import NumericalAbortException, ShapeMismatchException
from app.core.seeding import derive_seed, spawn_rng
from app.domain.models.simulation import GRFSpec, NSConfig, SimulatedDataset, Trajectory

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SpectralGrid:
    """Wavenumbers on [-pi, pi]^2 for rfft2 layout: k1 along axis 0, k2 along axis 1."""

    n: int
    k1: np.ndarray
    k2: np.ndarray
    d1: np.ndarray  # derivative wavenumbers, Nyquist zeroed
    d2: np.ndarray
    k_sq: np.ndarray
    inv_k_sq: np.ndarray
    dealias: np.ndarray
    x: np.ndarray  # grid coordinates along each axis

    @classmethod
    def build(cls, n: int) -> "SpectralGrid":
        k1 = np.fft.fftfreq(n, d=1.0 / n)[:, None] * np.ones((1, n // 2 + 1))
        k2 = np.fft.rfftfreq(n, d=1.0 / n)[None, :] * np.ones((n, 1))
        d1 = np.where(np.abs(k1) == n // 2, 0.0, k1)
        d2 = np.where(np.abs(k2) == n // 2, 0.0, k2)
        k_sq = k1**2 + k2**2
        inv_k_sq = np.zeros_like(k_sq)
        inv_k_sq[k_sq > 0] = 1.0 / k_sq[k_sq > 0]
        cutoff = n / 3.0
        dealias = (np.abs(k1) < cutoff) & (np.abs(k2) < cutoff)
        x = -np.pi + 2.0 * np.pi * np.arange(n) / n
        return cls(n, k1, k2, d1, d2, k_sq, inv_k_sq, dealias, x)

    def fft(self, field: np.ndarray) -> np.ndarray:
        return np.fft.rfft2(field, norm="forward")

    def ifft(self, coeffs: np.ndarray) -> np.ndarray:
        return np.fft.irfft2(coeffs, s=(self.n, self.n), norm="forward")


class SimulationService(BaseServiceImpl[NSConfig]):
    """Pseudo-spectral vorticity solver with GRF initial conditions."""

    def __init__(self, config: NSConfig, grf: Optional[GRFSpec] = None, settings: Optional[Settings] = None):
        super().__init__(config, settings)
        self.grf = grf or GRFSpec()
        self.grid = SpectralGrid.build(config.grid_n)
        _, x2 = np.meshgrid(self.grid.x, self.grid.x, indexing="ij")
        self.forcing = config.forcing_amplitude * np.cos(config.forcing_wavenumber * x2)
        self._forcing_hat = self.grid.fft(self.forcing)
        self._decay = np.exp(-config.viscosity * self.grid.k_sq * config.dt)

    def coordinates(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.grid.x, self.grid.x, indexing="ij")

    # --- initial conditions -----------------------------------------------

    def sample_grf(self, spec: Optional[GRFSpec] = None, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """Mean-zero periodic field with power spectrum ~ (|k|^2 + tau_corr^2)^(-alpha)."""
        spec = spec or self.grf
        rng = rng if rng is not None else np.random.default_rng(spec.seed)
        n = self.grid.n
        k1 = np.fft.fftfreq(n, d=1.0 / n)[:, None]
        k2 = np.fft.fftfreq(n, d=1.0 / n)[None, :]
        sigma = spec.tau_corr ** (spec.alpha - 1.0)
        sqrt_eig = sigma * (k1**2 + k2**2 + spec.tau_corr**2) ** (-spec.alpha / 2.0)
        sqrt_eig[0, 0] = 0.0
        xi = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        field = np.fft.ifft2(sqrt_eig * xi, norm="forward").real
        return field - field.mean()

    # --- spectral operators -------------------------------------------------

    def velocity_hat(self, omega_hat: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        psi_hat = omega_hat * self.grid.inv_k_sq
        return 1j * self.grid.d2 * psi_hat, -1j * self.grid.d1 * psi_hat

    def velocity_from_vorticity(self, omega: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Biot-Savart inversion: u = grad-perp(psi), -laplacian(psi) = omega, zero mean mode."""
        self._check(omega)
        u1_hat, u2_hat = self.velocity_hat(self.grid.fft(omega))
        return self.grid.ifft(u1_hat), self.grid.ifft(u2_hat)

    def spectral_divergence(self, omega: np.ndarray) -> float:
        u1_hat, u2_hat = self.velocity_hat(self.grid.fft(omega))
        div = 1j * self.grid.d1 * u1_hat + 1j * self.grid.d2 * u2_hat
        return float(np.max(np.abs(div)))

    def _tendency(self, omega_hat: np.ndarray) -> np.ndarray:
        """Dealiased -u.grad(omega) plus forcing, in spectral space."""
        u1_hat, u2_hat = self.velocity_hat(omega_hat)
        u1 = self.grid.ifft(u1_hat)
        u2 = self.grid.ifft(u2_hat)
        w1 = self.grid.ifft(1j * self.grid.d1 * omega_hat)
        w2 = self.grid.ifft(1j * self.grid.d2 * omega_hat)
        advection = self.grid.fft(u1 * w1 + u2 * w2) * self.grid.dealias
        return -advection + self._forcing_hat

    def step_hat(self, omega_hat: np.ndarray) -> np.ndarray:
        dt = self.config.dt
        e = self._decay
        n1 = self._tendency(omega_hat)
        predictor = e * (omega_hat + dt * n1)
        n2 = self._tendency(predictor)
        return e * omega_hat + 0.5 * dt * (e * n1 + n2)

    def step(self, omega: np.ndarray) -> np.ndarray:
        """One substep: exact viscous decay via integrating factor, Heun for advection and forcing."""
        self._check(omega)
        out = self.grid.ifft(self.step_hat(self.grid.fft(omega)))
        if not np.all(np.isfinite(out)):
            raise NumericalAbortException("non-finite vorticity", {"stability": self.stability_note(omega)})
        return out

    def advance(self, omega: np.ndarray, n_steps: int) -> np.ndarray:
        self._check(omega)
        omega_hat = self.grid.fft(omega)
        for _ in range(n_steps):
            omega_hat = self.step_hat(omega_hat)
        return self.grid.ifft(omega_hat)

    # --- diagnostics ----------------------------------------------------------

    @staticmethod
    def enstrophy(omega: np.ndarray) -> float:
        return float(0.5 * np.mean(omega**2))

    def cfl(self, omega: np.ndarray) -> float:
        u1, u2 = self.velocity_from_vorticity(omega)
        dx = 2.0 * np.pi / self.grid.n
        return float(np.max(np.abs(u1) + np.abs(u2)) * self.config.dt / dx)

    def stability_note(self, omega: np.ndarray) -> str:
        finite = omega[np.isfinite(omega)]
        peak = float(np.max(np.abs(finite))) if finite.size else float("nan")
        return f"dt={self.config.dt} nu={self.config.viscosity:g} max|omega|={peak:.3g}"

    # --- trajectories ---------------------------------------------------------

    def simulate_trajectory(self, seed: int, index: int = 0, n_frames: Optional[int] = None) -> Trajectory:
        n_frames = n_frames or self.config.n_frames
        stride = self.config.snapshot_stride
        rng = spawn_rng(seed, index)
        omega = self.sample_grf(rng=rng)
        frames = np.empty((n_frames, self.grid.n, self.grid.n))
        frames[0] = omega
        max_cfl = self.cfl(omega)
        enstrophy = [self.enstrophy(omega)]
        omega_hat = self.grid.fft(omega)
        for f in range(1, n_frames):
            for _ in range(stride):
                omega_hat = self.step_hat(omega_hat)
            omega = self.grid.ifft(omega_hat)
            if not np.all(np.isfinite(omega)):
                raise NumericalAbortException(
                    "trajectory diverged",
                    {"trajectory": index, "frame": f, "stability": self.stability_note(omega)},
                )
            cfl = self.cfl(omega)
            if cfl > self.config.cfl_limit:
                raise NumericalAbortException(
                    "CFL limit exceeded",
                    {"trajectory": index, "frame": f, "cfl": round(cfl, 4), "limit": self.config.cfl_limit},
                )
            max_cfl = max(max_cfl, cfl)
            frames[f] = omega
            enstrophy.append(self.enstrophy(omega))
        logger.debug("trajectory %d: max CFL %.4f, final enstrophy %.4g", index, max_cfl, enstrophy[-1])
        return Trajectory(frames, self.config, derive_seed(seed, index), index, max_cfl, enstrophy)

    def simulate_dataset(self, n_traj: Optional[int] = None, seed: Optional[int] = None) -> SimulatedDataset:
        """n_traj trajectories; even frames form the train split, odd frames the held-out split."""
        n_traj = n_traj or self.config.n_traj
        seed = self.grf.seed if seed is None else seed
        logger.info(
            "simulating %d trajectories on %dx%d (Re=%g, dt=%g, stride=%d)",
            n_traj, self.grid.n, self.grid.n, self.config.reynolds, self.config.dt, self.config.snapshot_stride,
        )
        trajectories: List[Trajectory] = self.map_ordered(
            lambda idx: self.simulate_trajectory(seed, idx), range(n_traj)
        )
        frames = range(self.config.n_frames)
        return SimulatedDataset(
            trajectories,
            train_frames=[f for f in frames if f % 2 == 0],
            held_out_frames=[f for f in frames if f % 2 == 1],
        )

    def _check(self, omega: np.ndarray) -> None:
        if omega.shape != (self.grid.n, self.grid.n):
            raise ShapeMismatchException("vorticity field", (self.grid.n, self.grid.n), omega.shape)
