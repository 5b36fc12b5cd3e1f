from __future__ import annotations

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.application.services.base import BaseServiceImpl
from app.application.services.diffusion_service import DiffusionService
from app.application.services.mask_service import restrict
from app.application.services.training_service import densify_conditioning
from app.core.config import Settings
from app.core.exceptions import NumericalAbortException, ShapeMismatchException, ValidationException
from app.core.seeding import spawn_rng
from app.domain.interfaces.denoiser import EpsilonPredictor
from app.domain.models.inference import Ensemble, EvalConfig, Reconditioning, Rollout, UncertaintyMap
from app.domain.models.training import NormStats, PreInterp

logger = logging.getLogger(__name__)

IDENTITY_STATS = NormStats(0.0, 1.0)


def uncertainty_map(ensemble: Ensemble) -> UncertaintyMap:
    """Per-pixel sample std (K-1 denominator) and mean."""
    if ensemble.k < 2:
        raise ValidationException(f"uncertainty needs at least 2 members, got {ensemble.k}")
    members = ensemble.members
    return UncertaintyMap(sigma=members.std(axis=0, ddof=1), mean=members.mean(axis=0))


class InferenceService(BaseServiceImpl[EvalConfig]):
    """Conditional ensembles and rollouts in physical units."""

    def __init__(
        self,
        config: EvalConfig,
        diffusion: DiffusionService,
        denoiser: EpsilonPredictor,
        stats: Optional[NormStats] = None,
        preinterp: PreInterp = PreInterp.NONE,
        settings: Optional[Settings] = None,
    ):
        super().__init__(config, settings)
        self.diffusion = diffusion
        self.denoiser = denoiser
        self.stats = stats or IDENTITY_STATS
        self.preinterp = preinterp

    def _conditioning(self, x_c: np.ndarray, m_i: np.ndarray) -> np.ndarray:
        """Physical conditioning values -> the normalized, restricted (optionally densified) channel."""
        z_c = restrict(self.stats.normalize(np.asarray(x_c, dtype=np.float64)), m_i)
        return densify_conditioning(z_c, m_i, self.preinterp, self.config.rbf_shape)

    def sample_member(self, x_c: np.ndarray, m_i: np.ndarray, key: Tuple[int, ...], seed: int) -> np.ndarray:
        z_c = self._conditioning(x_c, m_i)
        z = self.diffusion.sample(self.denoiser, z_c, m_i.astype(np.float64), spawn_rng(seed, *key))
        return self.stats.denormalize(z)

    def _run_members(
        self, conditionings: Sequence[np.ndarray], m_i: np.ndarray, keys: Sequence[Tuple[int, ...]], seed: int, horizon: int
    ) -> np.ndarray:
        def run(job: Tuple[int, np.ndarray, Tuple[int, ...]]) -> np.ndarray:
            member, x_c, key = job
            try:
                return self.sample_member(x_c, m_i, key, seed)
            except NumericalAbortException as exc:
                raise NumericalAbortException(
                    "sampler aborted", {**exc.context, "member": member, "horizon": horizon}
                ) from exc

        jobs = [(j, c, key) for j, (c, key) in enumerate(zip(conditionings, keys))]
        return np.stack(self.map_ordered(run, jobs))

    def sample_ensemble(
        self,
        x_c: np.ndarray,
        m_i: np.ndarray,
        k: Optional[int] = None,
        seed: Optional[int] = None,
        member_keys: Optional[Sequence[Tuple[int, ...]]] = None,
    ) -> Ensemble:
        """K independent DDIM samples under one conditioning; member j draws from seed split (seed, j)."""
        if x_c.shape != m_i.shape:
            raise ShapeMismatchException("sample_ensemble", x_c.shape, m_i.shape)
        k = k or self.config.k
        seed = self.config.seed if seed is None else seed
        keys = [tuple(key) for key in member_keys] if member_keys is not None else [(j,) for j in range(k)]
        members = self._run_members([x_c] * len(keys), m_i, keys, seed, horizon=1)
        logger.debug("sampled ensemble of %d members", len(keys))
        return Ensemble(members, keys, np.asarray(x_c), m_i)

    def rollout(
        self,
        x_c: np.ndarray,
        m_i: np.ndarray,
        horizon: Optional[int] = None,
        k: Optional[int] = None,
        seed: Optional[int] = None,
        reconditioning: Optional[Reconditioning] = None,
    ) -> Rollout:
        """Autoregressive forecast: step h conditions on m_i applied to step h-1's prediction."""
        horizon = horizon or self.config.horizon
        if horizon < 1:
            raise ValidationException(f"horizon must be >= 1, got {horizon}")
        k = k or self.config.k
        seed = self.config.seed if seed is None else seed
        mode = reconditioning or self.config.reconditioning
        first = self.sample_ensemble(x_c, m_i, k, seed)
        out = Rollout([first], [np.broadcast_to(np.asarray(x_c), (k, *x_c.shape)).copy()])
        previous = first
        for h in range(2, horizon + 1):
            if mode == Reconditioning.MEAN:
                conditionings = [restrict(previous.mean, m_i)] * k
            else:
                conditionings = [restrict(previous.members[j], m_i) for j in range(k)]
            keys = [(j, h) for j in range(k)]
            members = self._run_members(conditionings, m_i, keys, seed, horizon=h)
            stacked = np.stack(conditionings)
            previous = Ensemble(members, keys, stacked, m_i)
            out.ensembles.append(previous)
            out.conditionings.append(stacked)
        logger.info("rollout: horizon %d, K=%d, reconditioning=%s", horizon, k, mode.value)
        return out

    @staticmethod
    def horizon_spread(rollout: Rollout) -> List[float]:
        """Spatially averaged sigma per horizon."""
        return [float(uncertainty_map(e).sigma.mean()) for e in rollout.ensembles]
