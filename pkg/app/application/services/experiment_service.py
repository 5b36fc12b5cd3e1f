from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from app.application.services.base import BaseServiceImpl
from app.application.services.diffusion_service import DiffusionService
from app.application.services.inference_service import InferenceService
from app.application.services.mask_service import MaskService, restrict
from app.application.services.metrics_service import MetricsService, persistence_baseline, zero_field_baseline
from app.application.services.training_service import TrainingData, TrainingService, prepare_training_data
from app.core.config import RunConfig, Settings
from app.core.exceptions import ValidationException
from app.core.seeding import spawn_rng
from app.domain.models.container import FieldContainer
from app.domain.models.denoiser import DenoiserParams
from app.domain.models.inference import Ensemble
from app.domain.models.masks import MaskPair, ScenarioSpec
from app.domain.models.reports import CRPSReport
from app.domain.models.training import NormStats, Task, TrainingResult
from app.domain.nn.unet import UNet, init_params, parameter_count

logger = logging.getLogger(__name__)

# stream key for held-out instance selection, apart from the training streams (0, 1)
INSTANCE_STREAM = 2

BASELINE_UNTRAINED = "untrained"
BASELINE_PERSISTENCE = "persistence"
BASELINE_ZERO_FIELD = "zero_field"


@dataclass
class EvalInstance:
    """One held-out conditioning/target pair in physical units."""

    input_field: np.ndarray
    target: np.ndarray
    masks: MaskPair
    task: Task
    trajectory: int
    frame: int

    @property
    def x_c(self) -> np.ndarray:
        return restrict(self.input_field, self.masks.m_i)


def build_instances(
    held_out: np.ndarray, pairs: Sequence[MaskPair], n_instances: int, task: Task, seed: int
) -> List[EvalInstance]:
    """Pick held-out frames; forecast pairs use consecutive frames of the held-out split.

    held_out: (n_traj, n_frames, H, W). Trajectories are visited in a seeded
    permutation, cycling when more instances than trajectories are asked for.
    """
    n_traj, n_frames = held_out.shape[:2]
    if len(pairs) < n_traj:
        raise ValidationException(f"{n_traj} held-out trajectories need mask pairs, got {len(pairs)}")
    if task == Task.FORECAST and n_frames < 2:
        raise ValidationException("forecast instances need at least 2 held-out frames per trajectory")
    rng = spawn_rng(seed, INSTANCE_STREAM)
    order = rng.permutation(n_traj)
    last = n_frames - 1 if task == Task.FORECAST else n_frames
    instances: List[EvalInstance] = []
    for i in range(n_instances):
        traj = int(order[i % n_traj])
        t = int(rng.integers(last))
        t_o = t + 1 if task == Task.FORECAST else t
        instances.append(EvalInstance(held_out[traj, t], held_out[traj, t_o], pairs[traj], task, traj, t))
    return instances


@dataclass
class Evaluation:
    report: CRPSReport
    ensembles: List[Ensemble]
    instances: List[EvalInstance]


class ExperimentService(BaseServiceImpl[RunConfig]):
    """Train, evaluate, compare against baselines and sweep settings."""

    def __init__(self, config: RunConfig, settings: Optional[Settings] = None):
        super().__init__(config, settings)
        self.metrics = MetricsService(config.eval, settings)

    def validate(self, config: RunConfig) -> None:
        n = config.simulation.grid_n
        config.net.check_grid(n, n)

    def training_data(self, train_fields: np.ndarray, pairs: Sequence[MaskPair], config: Optional[RunConfig] = None) -> TrainingData:
        config = config or self.config
        return prepare_training_data(train_fields, pairs, config.loss.data_fraction)

    def train(self, data: TrainingData, config: Optional[RunConfig] = None, steps: Optional[int] = None) -> TrainingResult:
        config = config or self.config
        trainer = TrainingService(config, self.settings)
        return trainer.fit(init_params(config.net), data, steps)

    def inference(
        self, params: DenoiserParams, stats: NormStats, config: Optional[RunConfig] = None
    ) -> InferenceService:
        config = config or self.config
        denoiser = UNet(config.net).bind(params)
        diffusion = DiffusionService(config.diffusion, self.settings)
        return InferenceService(config.eval, diffusion, denoiser, stats, config.loss.preinterp, self.settings)

    def instances(self, held_out: np.ndarray, pairs: Sequence[MaskPair], n: Optional[int] = None) -> List[EvalInstance]:
        cfg = self.config.eval
        return build_instances(held_out, pairs, n or cfg.n_instances, cfg.task, cfg.seed)

    def evaluate(
        self,
        params: DenoiserParams,
        stats: NormStats,
        instances: Sequence[EvalInstance],
        k: Optional[int] = None,
        config: Optional[RunConfig] = None,
    ) -> Evaluation:
        ensembles = self.sample(params, stats, instances, k, config)
        report = self.score([e.members for e in ensembles], instances)
        return Evaluation(report, ensembles, list(instances))

    def sample(
        self,
        params: DenoiserParams,
        stats: NormStats,
        instances: Sequence[EvalInstance],
        k: Optional[int] = None,
        config: Optional[RunConfig] = None,
    ) -> List[Ensemble]:
        """K-member ensemble per instance; member (i, j) draws from seed split (seed, i, j)."""
        config = config or self.config
        k = k or config.eval.k
        service = self.inference(params, stats, config)
        return [
            service.sample_ensemble(
                inst.x_c, inst.masks.m_i, k, config.eval.seed, member_keys=[(i, j) for j in range(k)]
            )
            for i, inst in enumerate(instances)
        ]

    def score(self, members: Sequence[np.ndarray], instances: Sequence[EvalInstance]) -> CRPSReport:
        return self.metrics.crps_report(
            members,
            [inst.target for inst in instances],
            [inst.masks.m_i for inst in instances],
            [inst.masks.m_o for inst in instances],
            dense_truth=True,
        )

    def baselines(
        self, stats: NormStats, instances: Sequence[EvalInstance], k: Optional[int] = None
    ) -> Dict[str, CRPSReport]:
        """Untrained network (its head starts at zero, so eps_hat = 0), persistence and the zero field."""
        untrained = self.evaluate(init_params(self.config.net), stats, instances, k).report
        persistence = [persistence_baseline(inst.x_c, inst.masks.m_i)[None] for inst in instances]
        zero_field = [zero_field_baseline(inst.target.shape, stats.mu)[None] for inst in instances]
        return {
            BASELINE_UNTRAINED: untrained,
            BASELINE_PERSISTENCE: self.score(persistence, instances),
            BASELINE_ZERO_FIELD: self.score(zero_field, instances),
        }

    # --- sweeps ---

    def _run_setting(
        self,
        config: RunConfig,
        train_fields: np.ndarray,
        held_out: np.ndarray,
        pairs: Sequence[MaskPair],
        n_train: Optional[int] = None,
    ) -> CRPSReport:
        """Train on the first n_train trajectories (all by default), evaluate on every held-out one."""
        n_train = n_train or train_fields.shape[0]
        data = self.training_data(train_fields[:n_train], pairs[:n_train], config)
        result = self.train(data, config)
        cfg = config.eval
        instances = build_instances(held_out, pairs, cfg.n_instances, cfg.task, cfg.seed)
        return self.evaluate(result.params, data.stats, instances, config=config).report

    @staticmethod
    def _row(setting: str, report: CRPSReport, **extra) -> Dict[str, object]:
        return {
            "setting": setting,
            **extra,
            "crps": report.aggregate,
            "mse": report.mse,
            "n_instances": len(report.per_instance),
            "k": report.k,
        }

    def lambda_sweep(
        self, train_fields: np.ndarray, held_out: np.ndarray, pairs: Sequence[MaskPair], lambdas: Sequence[float]
    ) -> pd.DataFrame:
        """Retrain per overlap weight with everything else fixed."""
        rows = []
        for lam in lambdas:
            config = self.config.with_overrides({"loss.lam": float(lam)})
            logger.info("lambda sweep: training with lambda=%g", lam)
            report = self._run_setting(config, train_fields, held_out, pairs)
            rows.append(self._row(f"lambda={lam:g}", report, lam=float(lam)))
        return pd.DataFrame(rows)

    def sparsity_sweep(
        self, train_fields: np.ndarray, held_out: np.ndarray, scenarios: Sequence[ScenarioSpec]
    ) -> pd.DataFrame:
        """Retrain per observation scenario (pattern, density or block count, regime)."""
        rows = []
        n_traj = train_fields.shape[0]
        grid_n = train_fields.shape[-1]
        for scenario in scenarios:
            config = self.config.model_copy(update={"scenario": scenario})
            pairs = MaskService(scenario, grid_n, self.settings).make_pairs(n_traj)
            logger.info("sparsity sweep: training on %s", scenario.label())
            report = self._run_setting(config, train_fields, held_out, pairs)
            rows.append(
                self._row(
                    scenario.label(),
                    report,
                    pattern=scenario.pattern.value,
                    regime=scenario.regime.value,
                    budget=int(pairs[0].union.sum()),
                )
            )
        return pd.DataFrame(rows)

    def data_sweep(
        self, train_fields: np.ndarray, held_out: np.ndarray, pairs: Sequence[MaskPair], n_trajs: Sequence[int]
    ) -> pd.DataFrame:
        """Retrain on growing prefixes of the training trajectories; the held-out set stays whole."""
        available = train_fields.shape[0]
        rows = []
        for n in n_trajs:
            if not 1 <= n <= available:
                raise ValidationException(f"data sweep asks for {n} trajectories, dataset has {available}")
            logger.info("data sweep: training on %d of %d trajectories", n, available)
            report = self._run_setting(self.config, train_fields, held_out, pairs, n_train=int(n))
            rows.append(self._row(f"n_traj={n}", report, n_traj=int(n), data_fraction=n / available))
        return pd.DataFrame(rows)

    def model_sweep(
        self, train_fields: np.ndarray, held_out: np.ndarray, pairs: Sequence[MaskPair], base_dims: Sequence[int]
    ) -> pd.DataFrame:
        """Retrain per denoiser width; rows carry the parameter count."""
        rows = []
        for dim in base_dims:
            config = self.config.with_overrides({"net.base_dim": int(dim)})
            n_params = parameter_count(config.net)
            logger.info("model sweep: training base_dim=%d (%d parameters)", dim, n_params)
            report = self._run_setting(config, train_fields, held_out, pairs)
            rows.append(self._row(f"base_dim={dim}", report, base_dim=int(dim), params=n_params))
        return pd.DataFrame(rows)


# --- instance persistence (pure; the CLI does the I/O) ---


def instances_to_container(instances: Sequence[EvalInstance]) -> FieldContainer:
    """frames[i] = [input, target]; the mask section carries each instance's pair keyed by trajectory."""
    frames = np.stack([np.stack([inst.input_field, inst.target]) for inst in instances])
    return FieldContainer(
        frames,
        [inst.trajectory for inst in instances],
        np.stack([inst.masks.m_i for inst in instances]),
        np.stack([inst.masks.m_o for inst in instances]),
    )


def instance_records(instances: Sequence[EvalInstance]) -> List[Dict[str, object]]:
    return [
        {"instance": i, "trajectory": inst.trajectory, "frame": inst.frame, "task": inst.task.value}
        for i, inst in enumerate(instances)
    ]


def instances_from_container(container: FieldContainer, records: Sequence[Dict[str, object]]) -> List[EvalInstance]:
    if container.n_frames != 2 or not container.has_masks:
        raise ValidationException("targets container must hold [input, target] frames and a mask section")
    if len(records) != container.n_traj:
        raise ValidationException(f"{container.n_traj} instances but {len(records)} instance records")
    frames = container.frames.astype(np.float64)
    out: List[EvalInstance] = []
    for i, rec in enumerate(records):
        traj = container.instance_ids[i]
        pair = MaskPair(container.m_i[i], container.m_o[i], traj)
        out.append(EvalInstance(frames[i, 0], frames[i, 1], pair, Task(rec["task"]), traj, int(rec["frame"])))
    return out


def ensembles_to_container(ensembles: Sequence[Ensemble]) -> FieldContainer:
    """Instance on the trajectory axis, member on the frame axis."""
    return FieldContainer(np.stack([e.members for e in ensembles]))
