"""Navier-Stokes solver against closed-form solutions."""
from __future__ import annotations

import numpy as np
import pytest

from app.application.services.simulation_service import SimulationService
from app.core.exceptions import ShapeMismatchException
from app.domain.models.simulation import HELD_OUT_PARITY, TRAIN_PARITY, GRFSpec, NSConfig, parity_split


def _unforced(grid_n: int = 16, dt: float = 1e-3) -> SimulationService:
    return SimulationService(NSConfig(grid_n=grid_n, dt=dt, frame_interval=0.04, forcing_amplitude=0.0))


class TestVelocity:
    def test_single_mode_inversion(self):
        service = _unforced()
        x1, _ = service.coordinates()
        u1, u2 = service.velocity_from_vorticity(np.sin(x1))
        # psi = sin(x1); u = (d psi / d x2, -d psi / d x1)
        np.testing.assert_allclose(u1, 0.0, atol=1e-12)
        np.testing.assert_allclose(u2, -np.cos(x1), atol=1e-12)

    def test_divergence_free(self, rng):
        service = _unforced()
        assert service.spectral_divergence(rng.standard_normal((16, 16))) < 1e-12

    def test_shape_checked(self):
        with pytest.raises(ShapeMismatchException):
            _unforced().velocity_from_vorticity(np.zeros((8, 8)))


class TestTaylorGreen:
    @staticmethod
    def _relative_error(service: SimulationService, t: float) -> float:
        x1, x2 = service.coordinates()
        omega0 = np.cos(x1) + np.cos(x2)
        n_steps = int(round(t / service.config.dt))
        omega = service.advance(omega0, n_steps)
        exact = np.exp(-service.config.viscosity * t) * omega0
        return float(np.max(np.abs(omega - exact)) / np.max(np.abs(exact)))

    def test_decay_at_unit_time(self):
        assert self._relative_error(_unforced(), 1.0) < 1e-4

    def test_decay_is_exact_at_any_resolution(self):
        # exact viscous factor and a vanishing nonlinear term leave only round-off
        coarse = self._relative_error(_unforced(16, 2e-3), 1.0)
        fine = self._relative_error(_unforced(32, 1e-3), 1.0)
        assert coarse < 1e-12
        assert fine < 1e-12


class TestPureDiffusion:
    def test_amplitude_decays_every_frame(self):
        config = NSConfig(grid_n=16, n_frames=10, reynolds=0.1, forcing_amplitude=0.0)
        traj = SimulationService(config).simulate_trajectory(seed=4)
        assert np.all(np.diff(traj.enstrophy) < 0.0)


class TestTrajectories:
    def test_frames_and_diagnostics(self, toy_ns):
        service = SimulationService(toy_ns, GRFSpec(seed=3))
        traj = service.simulate_trajectory(seed=3, index=1)
        assert traj.frames.shape == (4, 16, 16)
        assert np.all(np.isfinite(traj.frames))
        assert len(traj.enstrophy) == 4
        assert 0.0 < traj.max_cfl <= toy_ns.cfl_limit

    def test_deterministic(self, toy_ns):
        service = SimulationService(toy_ns)
        a = service.simulate_dataset(seed=5)
        b = service.simulate_dataset(seed=5)
        for ta, tb in zip(a.trajectories, b.trajectories):
            np.testing.assert_array_equal(ta.frames, tb.frames)

    def test_parity_split(self, toy_ns):
        dataset = SimulationService(toy_ns).simulate_dataset(seed=1)
        assert dataset.train_frames == [0, 2]
        assert dataset.held_out_frames == [1, 3]
        frames = np.stack([t.frames for t in dataset.trajectories])
        np.testing.assert_array_equal(parity_split(frames, TRAIN_PARITY), dataset.split(TRAIN_PARITY))
        np.testing.assert_array_equal(parity_split(frames, HELD_OUT_PARITY), dataset.split(HELD_OUT_PARITY))

    def test_grf_is_mean_zero(self, rng):
        field = _unforced().sample_grf(rng=rng)
        assert abs(field.mean()) < 1e-12
        assert field.std() > 0.0


class TestConfig:
    def test_grid_must_be_power_of_two(self):
        with pytest.raises(ValueError):
            NSConfig(grid_n=24)

    def test_frame_interval_must_be_whole_substeps(self):
        with pytest.raises(ValueError):
            NSConfig(dt=1e-3, frame_interval=0.0405)

    def test_stride(self):
        assert NSConfig().snapshot_stride == 40


@pytest.mark.slow
def test_grf_spectral_slope():
    service = SimulationService(NSConfig(grid_n=64, forcing_amplitude=0.0))
    spec = GRFSpec(alpha=2.5, tau_corr=3.0)
    rng = np.random.default_rng(0)
    n = 64
    k = np.fft.fftfreq(n, d=1.0 / n)
    radius = np.sqrt(k[:, None] ** 2 + k[None, :] ** 2)
    shells = np.arange(12, 29)
    power = np.zeros(shells.size)
    for _ in range(512):
        spectrum = np.abs(np.fft.fft2(service.sample_grf(spec, rng))) ** 2
        for i, s in enumerate(shells):
            power[i] += spectrum[(radius >= s - 0.5) & (radius < s + 0.5)].mean()
    slope = np.polyfit(np.log(shells), np.log(power), 1)[0]
    assert abs(slope - (-2 * spec.alpha)) < 0.3


# frames 25-50 span t in [1, 2]; the forced shear mode alone gives an enstrophy of 3.4 to 12 there
ENSTROPHY_BAND = (1.0, 100.0)


@pytest.mark.slow
def test_forced_enstrophy_stays_in_band():
    dataset = SimulationService(NSConfig(n_frames=50)).simulate_dataset(n_traj=16, seed=0)
    means = np.array([np.mean(t.enstrophy[25:]) for t in dataset.trajectories])
    assert np.all(np.isfinite(means))
    low, high = ENSTROPHY_BAND
    assert np.all((means > low) & (means < high))
