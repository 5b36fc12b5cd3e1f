from __future__ import annotations

import logging
import math
from typing import List, Optional, Tuple

import numpy as np

from app.application.services.base import BaseServiceImpl
from app.core.config import Settings
from app.core.exceptions import MaskPlacementException, ShapeMismatchException, ValidationException
from app.core.seeding import spawn_rng
from app.domain.models.masks import BLOCK_SIZE, MaskPair, Pattern, Regime, ScenarioSpec

logger = logging.getLogger(__name__)


def pixel_budget(density: float, grid_n: int) -> int:
    """floor(density * area); 0.04 on 64x64 gives 163."""
    if not 0.0 < density <= 1.0:
        raise ValidationException(f"density must be in (0, 1], got {density}")
    return int(math.floor(density * grid_n * grid_n + 1e-9))


def restrict(field: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Restriction operator: M * U, zero where unobserved."""
    if field.shape != mask.shape:
        raise ShapeMismatchException("restrict", field.shape, mask.shape)
    return field * mask.astype(field.dtype if np.issubdtype(field.dtype, np.floating) else np.float64)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


class MaskService(BaseServiceImpl[ScenarioSpec]):
    def __init__(self, config: ScenarioSpec, grid_n: int, settings: Optional[Settings] = None):
        self.grid_n = grid_n
        super().__init__(config, settings)

    def validate(self, config: ScenarioSpec) -> None:
        area = self.grid_n * self.grid_n
        if config.pattern == Pattern.BLOCK:
            if config.n_blocks < 2:
                raise ValidationException("block pattern needs at least 2 blocks")
            if config.n_blocks * BLOCK_SIZE * BLOCK_SIZE > area or self.grid_n < BLOCK_SIZE:
                raise ValidationException(
                    f"{config.n_blocks} blocks of {BLOCK_SIZE}x{BLOCK_SIZE} do not fit a {self.grid_n}x{self.grid_n} grid"
                )
        elif pixel_budget(config.density, self.grid_n) < 2:
            raise ValidationException(
                f"density {config.density} leaves fewer than 2 pixels on a {self.grid_n}x{self.grid_n} grid"
            )

    def budget(self) -> int:
        if self.config.pattern == Pattern.BLOCK:
            return self.config.n_blocks * BLOCK_SIZE * BLOCK_SIZE
        return pixel_budget(self.config.density, self.grid_n)

    def _rng(self, instance_id: int) -> np.random.Generator:
        draw = 0 if self.config.regime == Regime.GLOBAL else instance_id
        pattern_key = 0 if self.config.pattern == Pattern.RANDOM else 1
        return spawn_rng(self.config.seed, pattern_key, draw)

    def make_random_pair(self, instance_id: int) -> MaskPair:
        spec = self.config
        n = self.grid_n
        budget = pixel_budget(spec.density, n)
        rng = self._rng(instance_id)
        chosen = rng.permutation(n * n)[:budget]
        shared = min(budget, _round_half_up(spec.overlap_fraction * budget))
        rest = chosen[shared:]
        n_input = (rest.size + 1) // 2
        m_i = np.zeros(n * n, dtype=bool)
        m_o = np.zeros(n * n, dtype=bool)
        m_i[chosen[:shared]] = True
        m_o[chosen[:shared]] = True
        m_i[rest[:n_input]] = True
        m_o[rest[n_input:]] = True
        return MaskPair(m_i.reshape(n, n), m_o.reshape(n, n), instance_id, spec)

    def _place_blocks(self, rng: np.random.Generator) -> List[Tuple[int, int]]:
        spec = self.config
        hi = self.grid_n - BLOCK_SIZE + 1
        anchors: List[Tuple[int, int]] = []
        for _ in range(spec.n_blocks):
            for _attempt in range(spec.max_retries):
                r, c = (int(v) for v in rng.integers(0, hi, size=2))
                if all(abs(r - ar) >= BLOCK_SIZE or abs(c - ac) >= BLOCK_SIZE for ar, ac in anchors):
                    anchors.append((r, c))
                    break
            else:
                raise MaskPlacementException(
                    f"could not place block {len(anchors) + 1} of {spec.n_blocks} after {spec.max_retries} attempts",
                    attempted=anchors,
                )
        return anchors

    def make_block_pair(self, instance_id: int) -> MaskPair:
        n = self.grid_n
        anchors = self._place_blocks(self._rng(instance_id))
        half = len(anchors) // 2
        m_i = np.zeros((n, n), dtype=bool)
        m_o = np.zeros((n, n), dtype=bool)
        for k, (r, c) in enumerate(anchors):
            target = m_i if k < half else m_o
            target[r : r + BLOCK_SIZE, c : c + BLOCK_SIZE] = True
        return MaskPair(m_i, m_o, instance_id, self.config)

    def make_pair(self, instance_id: int) -> MaskPair:
        if self.config.pattern == Pattern.BLOCK:
            return self.make_block_pair(instance_id)
        return self.make_random_pair(instance_id)

    def make_pairs(self, n_instances: int) -> List[MaskPair]:
        pairs = self.map_ordered(self.make_pair, range(n_instances))
        logger.info(
            "built %d mask pairs (%s, budget %d pixels on %dx%d)",
            n_instances, self.config.label(), self.budget(), self.grid_n, self.grid_n,
        )
        return pairs
