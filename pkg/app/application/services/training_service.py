from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from app.application.services.base import BaseServiceImpl
from app.application.services.diffusion_service import DiffusionService, forward_noise
from app.application.services.mask_service import restrict
from app.application.services.metrics_service import preinterp_nn, preinterp_rbf
from app.core.config import RunConfig, Settings
from app.core.exceptions import NumericalAbortException, ShapeMismatchException, ValidationException
from app.core.seeding import spawn_rng
from app.domain.models.denoiser import DenoiserParams
from app.domain.models.masks import MaskPair
from app.domain.models.training import (
    FillMode,
    NormStats,
    OptimConfig,
    OptimState,
    PreInterp,
    StepMetrics,
    Task,
    TrainExample,
    TrainingResult,
)
from app.domain.nn.unet import UNet
from app.domain.tensor import ops
from app.domain.tensor.tensor import Tape, Tensor, constant

logger = logging.getLogger(__name__)

StepCallback = Callable[[StepMetrics], None]
CheckpointCallback = Callable[[DenoiserParams, OptimState], None]


# --- normalization -------------------------------------------------------------


def normalize_stats(fields: np.ndarray, observed: np.ndarray) -> NormStats:
    """Mean/std over observed pixels only.

    fields: (n_traj, n_frames, H, W); observed: (n_traj, H, W) boolean union m_i | m_o.
    """
    if fields.ndim != 4 or observed.shape != (fields.shape[0], *fields.shape[2:]):
        raise ShapeMismatchException("normalize_stats", (fields.shape[0], *fields.shape[2:]), observed.shape)
    values = fields[np.broadcast_to(observed[:, None], fields.shape)]
    if values.size == 0:
        raise ValidationException("no observed pixels to normalize over")
    mu = float(values.mean())
    sigma = float(values.std())
    if not sigma > 0.0:
        raise ValidationException("observed values have zero variance; cannot normalize")
    return NormStats(mu, sigma)


# --- objective -------------------------------------------------------------------


def loss_weights(m_i: np.ndarray, m_o: np.ndarray, lam: float) -> np.ndarray:
    """M~ = M_o + lambda * (M_i * M_o)."""
    m_o = m_o.astype(np.float64)
    return m_o + lam * (m_i.astype(np.float64) * m_o)


def dual_masked_loss(eps: np.ndarray, eps_hat: np.ndarray, m_i: np.ndarray, m_o: np.ndarray, lam: float) -> float:
    if not (eps.shape == eps_hat.shape == m_i.shape == m_o.shape):
        raise ShapeMismatchException("dual_masked_loss", eps.shape, eps_hat.shape)
    if not np.any(m_o):
        raise ValidationException("target mask is empty")
    if lam < 0:
        raise ValidationException(f"lambda must be >= 0, got {lam}")
    w = loss_weights(m_i, m_o, lam)
    return float(np.sum(w * (eps - eps_hat) ** 2) / np.sum(w))


def dual_masked_loss_tensor(eps: np.ndarray, eps_hat: Tensor, m_i: np.ndarray, m_o: np.ndarray, lam: float) -> Tensor:
    """Same objective on the tape; eps_hat may be [H, W] or [1, H, W]."""
    if eps_hat.size != eps.size or m_i.shape != m_o.shape or m_o.size != eps.size:
        raise ShapeMismatchException("dual_masked_loss", eps.shape, eps_hat.shape)
    if not np.any(m_o):
        raise ValidationException("target mask is empty")
    dtype = eps_hat.dtype
    w = loss_weights(m_i, m_o, lam).reshape(eps_hat.shape)
    diff = ops.sub(eps_hat, constant(np.reshape(eps, eps_hat.shape), dtype=dtype))
    weighted = ops.mul(ops.mul(diff, diff), constant(w, dtype=dtype))
    return ops.scale(ops.sum_all(weighted), 1.0 / float(w.sum()))


def build_x0(
    target: np.ndarray,
    m_o: np.ndarray,
    fill_mode: FillMode,
    x_c: Optional[np.ndarray] = None,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Dense x_0 from a sparsely known target: M_o pixels keep the target, the rest take the fill."""
    if target.shape != m_o.shape:
        raise ShapeMismatchException("build_x0", target.shape, m_o.shape)
    known = m_o.astype(bool)
    if fill_mode == FillMode.ZERO:
        fill = np.zeros_like(target, dtype=np.float64)
    elif fill_mode == FillMode.CONDITIONING:
        if x_c is None:
            raise ValidationException("conditioning fill needs x_c")
        fill = np.asarray(x_c, dtype=np.float64)
    else:
        if rng is None:
            raise ValidationException("noise fill needs an rng")
        fill = rng.standard_normal(target.shape)
    return np.where(known, target, fill)


# --- optimizer ---------------------------------------------------------------------


def clip_grad_norm(flat_grad: np.ndarray, max_norm: float) -> Tuple[np.ndarray, float]:
    norm = float(np.sqrt(np.sum(flat_grad.astype(np.float64) ** 2)))
    if norm > max_norm:
        return flat_grad * (max_norm / norm), norm
    return flat_grad, norm


def cosine_lr(step: int, total: int, lr: float, lr_min_ratio: float) -> float:
    """Cosine anneal from lr to lr * lr_min_ratio (> 0) over total steps."""
    lr_min = lr * lr_min_ratio
    progress = min(max(step, 0), total) / max(total, 1)
    return lr_min + 0.5 * (lr - lr_min) * (1.0 + math.cos(math.pi * progress))


def adamw_update(
    flat: np.ndarray, grad: np.ndarray, state: OptimState, lr: float, cfg: OptimConfig
) -> Tuple[np.ndarray, OptimState]:
    step = state.step + 1
    g = grad.astype(np.float64)
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * g
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * g * g
    m_hat = m / (1.0 - cfg.beta1**step)
    v_hat = v / (1.0 - cfg.beta2**step)
    p = flat.astype(np.float64)
    p = p - lr * cfg.weight_decay * p
    p = p - lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return p.astype(flat.dtype), OptimState(m, v, step)


# --- data ------------------------------------------------------------------------


@dataclass
class TrainingData:
    """Z-scored train-split frames with one mask pair per trajectory."""

    fields: np.ndarray  # (n_traj, n_frames, H, W), normalized
    pairs: List[MaskPair]
    stats: NormStats

    @property
    def n_traj(self) -> int:
        return int(self.fields.shape[0])

    @property
    def n_frames(self) -> int:
        return int(self.fields.shape[1])


def prepare_training_data(train_fields: np.ndarray, pairs: Sequence[MaskPair], data_fraction: float = 1.0) -> TrainingData:
    n_used = max(1, math.ceil(data_fraction * train_fields.shape[0]))
    if len(pairs) < n_used:
        raise ValidationException(f"{n_used} trajectories need mask pairs, got {len(pairs)}")
    fields = train_fields[:n_used]
    used_pairs = list(pairs[:n_used])
    observed = np.stack([p.union for p in used_pairs])
    stats = normalize_stats(fields, observed)
    return TrainingData(stats.normalize(fields.astype(np.float64)), used_pairs, stats)


def densify_conditioning(x_c: np.ndarray, m_i: np.ndarray, strategy: PreInterp, shape_param: float = 0.0) -> np.ndarray:
    """Optionally fill voids of the conditioning field before it enters the network."""
    if strategy == PreInterp.NN:
        return preinterp_nn(x_c, m_i)
    if strategy == PreInterp.RBF:
        return preinterp_rbf(x_c, m_i, shape_param or None)
    return x_c


def _fingerprint(batch: Sequence[TrainExample], step: int) -> str:
    h = hashlib.blake2b(digest_size=8)
    h.update(str(step).encode())
    for ex in batch:
        h.update(f"{ex.trajectory}:{ex.frame}:{ex.task.value}:{ex.masks.instance_id};".encode())
    return h.hexdigest()


class TrainingService(BaseServiceImpl[RunConfig]):
    def __init__(self, config: RunConfig, settings: Optional[Settings] = None):
        super().__init__(config, settings)
        self.net = UNet(config.net)
        self.diffusion = DiffusionService(config.diffusion, settings)

    def validate(self, config: RunConfig) -> None:
        n = config.simulation.grid_n
        config.net.check_grid(n, n)

    # --- batches ---

    def sample_batch(self, data: TrainingData, step: int) -> List[TrainExample]:
        rng = spawn_rng(self.config.optimizer.seed, step, 0)
        batch: List[TrainExample] = []
        can_forecast = data.n_frames >= 2
        for _ in range(self.config.optimizer.batch_size):
            traj = int(rng.integers(data.n_traj))
            forecast = can_forecast and rng.random() < self.config.loss.forecast_fraction
            if forecast:
                t_i = int(rng.integers(data.n_frames - 1))
                t_o, task = t_i + 1, Task.FORECAST
            else:
                t_i = int(rng.integers(data.n_frames))
                t_o, task = t_i, Task.RECONSTRUCTION
            batch.append(
                TrainExample(data.fields[traj, t_i], data.fields[traj, t_o], data.pairs[traj], task, traj, t_i)
            )
        return batch

    # --- one example on its own tape ---

    def example_gradient(
        self, params: DenoiserParams, example: TrainExample, rng: np.random.Generator
    ) -> Tuple[float, np.ndarray]:
        loss_cfg = self.config.loss
        m_i, m_o = example.masks.m_i, example.masks.m_o
        x_c = restrict(example.input_field, m_i)
        x_c = densify_conditioning(x_c, m_i, loss_cfg.preinterp, self.config.eval.rbf_shape)
        x0 = build_x0(example.target_field, m_o, loss_cfg.fill_mode, x_c, rng)
        tau = self.diffusion.sample_tau(rng)
        x_tau, eps = forward_noise(x0, tau, self.diffusion.schedule, rng)
        with Tape() as tape:
            w = self.net.weights(params, requires_grad=True)
            x = self.net.stack_inputs(x_tau, x_c, m_i, params.dtype)
            eps_hat = self.net.apply(w, x, tau, rng)
            loss = dual_masked_loss_tensor(eps, eps_hat, m_i, m_o, loss_cfg.lam)
        grads = tape.backward(loss)
        flat = self.net.flatten({name: grads[t] for name, t in w.items()})
        return float(loss.item()), flat

    def train_step(
        self, params: DenoiserParams, batch: Sequence[TrainExample], state: OptimState, step_seed: int
    ) -> Tuple[DenoiserParams, OptimState, StepMetrics]:
        """Average per-example gradients, clip, then one AdamW update at the scheduled lr."""
        optim = self.config.optimizer
        slots = list(enumerate(batch))
        results = self.map_ordered(
            lambda slot: self.example_gradient(params, slot[1], spawn_rng(step_seed, slot[0])), slots
        )
        loss = float(np.mean([r[0] for r in results]))
        grad = np.zeros(params.count, dtype=np.float64)
        for _, g in results:
            grad += g
        grad /= len(results)
        fingerprint = _fingerprint(batch, state.step)
        if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
            raise NumericalAbortException(
                "non-finite training loss", {"step": state.step, "batch_fingerprint": fingerprint}
            )
        grad, norm = clip_grad_norm(grad, optim.grad_clip)
        lr = cosine_lr(state.step, optim.steps, optim.lr, optim.lr_min_ratio)
        flat, new_state = adamw_update(params.flat, grad, state, lr, optim)
        metrics = StepMetrics(new_state.step, loss, lr, norm, norm > optim.grad_clip, fingerprint)
        return params.with_flat(flat), new_state, metrics

    def fit(
        self,
        params: DenoiserParams,
        data: TrainingData,
        steps: Optional[int] = None,
        state: Optional[OptimState] = None,
        on_step: Optional[StepCallback] = None,
        on_checkpoint: Optional[CheckpointCallback] = None,
    ) -> TrainingResult:
        """Run until state.step reaches ``steps``; resuming from a saved state continues the same stream."""
        optim = self.config.optimizer
        total = steps or optim.steps
        state = state or OptimState.zeros_like(params.flat)
        history: List[StepMetrics] = []
        if state.step:
            logger.info("resuming at step %d of %d", state.step, total)
        while state.step < total:
            batch = self.sample_batch(data, state.step)
            params, state, metrics = self.train_step(params, batch, state, self._step_seed(state.step))
            history.append(metrics)
            if on_step is not None:
                on_step(metrics)
            if state.step % optim.log_every == 0 or state.step == total:
                logger.info(
                    "step %d/%d loss %.5f lr %.3e grad-norm %.4f",
                    state.step, total, metrics.loss, metrics.lr, metrics.grad_norm,
                )
            if on_checkpoint is not None and (state.step % optim.checkpoint_every == 0 or state.step == total):
                on_checkpoint(params, state)
        return TrainingResult(params, state, history)

    def _step_seed(self, step: int) -> int:
        return int(spawn_rng(self.config.optimizer.seed, step, 1).integers(2**62))
