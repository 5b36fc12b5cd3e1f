from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from pydantic import model_validator

from app.domain.models.base import ConfigModel, chosen, paper

BLOCK_SIZE = 8


class Pattern(str, Enum):
    RANDOM = "random"
    BLOCK = "block"


class Regime(str, Enum):
    GLOBAL = "global"
    INSTANCE = "instance"


class ScenarioSpec(ConfigModel):
    pattern: Pattern = paper(Pattern.RANDOM, "spatial pattern of observed locations")
    density: float = paper(0.10, "fraction of the grid observed (random pattern)", gt=0, le=1)
    n_blocks: int = paper(2, "number of 8x8 blocks (block pattern)", ge=0)
    regime: Regime = paper(Regime.INSTANCE, "one shared layout vs a fixed per-instance layout")
    overlap_fraction: float = chosen(
        0.0, "input/target pixels are disjoint in the stress tests; >0 only for the overlap-weight ablation", ge=0, le=1
    )
    max_retries: int = chosen(10_000, "bound on rejection sampling of block anchors", ge=1)
    seed: int = chosen(0, "mask seed; instance streams derive from (seed, instance_id)")

    @model_validator(mode="after")
    def _check(self) -> "ScenarioSpec":
        if self.pattern == Pattern.BLOCK and self.n_blocks % 2:
            raise ValueError(f"n_blocks must be even, got {self.n_blocks}")
        return self

    def label(self) -> str:
        if self.pattern == Pattern.BLOCK:
            return f"block-{self.n_blocks}-{self.regime.value}"
        return f"random-{self.density:g}-{self.regime.value}"


@dataclass(frozen=True)
class MaskPair:
    m_i: np.ndarray  # bool (H, W), conditioning
    m_o: np.ndarray  # bool (H, W), target
    instance_id: int
    spec: Optional[ScenarioSpec] = None

    @property
    def overlap(self) -> np.ndarray:
        return self.m_i & self.m_o

    @property
    def union(self) -> np.ndarray:
        return self.m_i | self.m_o

    def counts(self) -> dict:
        return {
            "m_i": int(self.m_i.sum()),
            "m_o": int(self.m_o.sum()),
            "overlap": int(self.overlap.sum()),
            "union": int(self.union.sum()),
        }
