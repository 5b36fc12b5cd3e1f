from .base import ConfigModel
from .container import FieldContainer
from .denoiser import DenoiserConfig, DenoiserParams
from .diffusion import DDIMPlan, DiffusionConfig, NoiseSchedule
from .inference import Ensemble, EvalConfig, Reconditioning, Rollout, UncertaintyMap
from .masks import MaskPair, Pattern, Regime, ScenarioSpec
from .reports import CalibrationReport, CRPSReport, DistanceProfile
from .simulation import GRFSpec, NSConfig, SimulatedDataset, Trajectory
from .training import Checkpoint, LossConfig, NormStats, OptimConfig, OptimState, Task, TrainExample

__all__ = [
    "ConfigModel",
    "FieldContainer",
    "DenoiserConfig",
    "DenoiserParams",
    "DDIMPlan",
    "DiffusionConfig",
    "NoiseSchedule",
    "Ensemble",
    "EvalConfig",
    "Reconditioning",
    "Rollout",
    "UncertaintyMap",
    "MaskPair",
    "Pattern",
    "Regime",
    "ScenarioSpec",
    "CalibrationReport",
    "CRPSReport",
    "DistanceProfile",
    "GRFSpec",
    "NSConfig",
    "SimulatedDataset",
    "Trajectory",
    "Checkpoint",
    "LossConfig",
    "NormStats",
    "OptimConfig",
    "OptimState",
    "Task",
    "TrainExample",
]
