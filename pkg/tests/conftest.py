from __future__ import annotations

import numpy as np
import pytest

from app.application.services.mask_service import MaskService
from app.application.services.training_service import TrainingData, TrainingService, prepare_training_data
from app.core.config import RunConfig
from app.domain.models.denoiser import DenoiserConfig, DenoiserParams
from app.domain.models.masks import ScenarioSpec
from app.domain.models.simulation import NSConfig
from app.domain.nn.unet import init_params


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_net() -> DenoiserConfig:
    """8x8-capable denoiser small enough for finite differences."""
    return DenoiserConfig(base_dim=4, dim_mults=(1, 2), res_blocks_per_stage=1, norm_groups=2, dropout=0.0)


@pytest.fixture
def toy_ns() -> NSConfig:
    return NSConfig(grid_n=16, n_frames=4, n_traj=2)


@pytest.fixture
def tiny_run(tiny_net: DenoiserConfig) -> RunConfig:
    """End-to-end configuration on an 8x8 grid with a handful of steps."""
    return RunConfig(
        simulation=NSConfig(grid_n=8, n_frames=4, n_traj=3),
        scenario=ScenarioSpec(density=0.25),
        net=tiny_net,
        diffusion={"T": 20, "ddim_steps": 5},
        optimizer={"batch_size": 2, "steps": 3, "log_every": 1, "checkpoint_every": 2},
        eval={"k": 3, "n_instances": 2, "horizon": 2, "distance_bins": 3},
    )


@pytest.fixture
def tiny_data(tiny_run: RunConfig, rng: np.random.Generator) -> TrainingData:
    fields = rng.standard_normal((3, 2, 8, 8))
    pairs = MaskService(tiny_run.scenario, 8).make_pairs(3)
    return prepare_training_data(fields, pairs)


@pytest.fixture
def toy_params(tiny_run: RunConfig, tiny_data: TrainingData) -> DenoiserParams:
    """Weights after 100 toy training steps; the zero-initialized head has moved by then."""
    config = tiny_run.with_overrides({"optimizer.steps": 100, "optimizer.log_every": 50, "optimizer.checkpoint_every": 100})
    return TrainingService(config).fit(init_params(config.net), tiny_data).params
