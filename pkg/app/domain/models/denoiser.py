from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterator, Tuple

import numpy as np
from pydantic import field_validator

from app.core.exceptions import ShapeMismatchException, ValidationException
from app.domain.models.base import ConfigModel, chosen, paper

IN_CHANNELS = 3
OUT_CHANNELS = 1


class DenoiserConfig(ConfigModel):
    base_dim: int = paper(64, "UNet base dim", ge=1)
    dim_mults: Tuple[int, ...] = paper((1, 2, 2, 2), "channel multipliers per stage")
    res_blocks_per_stage: int = paper(2, "ResNet blocks per stage", ge=1)
    dropout: float = paper(0.1, "dropout inside residual blocks", ge=0, lt=1)
    norm_groups: int = chosen(8, "group-norm groups; divides every stage width at base 32 and 64", ge=1)
    time_embed_mult: int = chosen(4, "time embedding width is 4x the base dim", ge=1)
    attention: bool = chosen(False, "attention at resolution 16 omitted at desk scale; recorded as a deviation")
    init_seed: int = chosen(0, "parameter initialization seed")

    @field_validator("dim_mults")
    @classmethod
    def _mults(cls, v: Tuple[int, ...]) -> Tuple[int, ...]:
        if not v or any(m < 1 for m in v):
            raise ValueError("dim_mults must be a nonempty tuple of positive ints")
        return tuple(v)

    @field_validator("attention")
    @classmethod
    def _no_attention(cls, v: bool) -> bool:
        if v:
            raise ValueError("attention blocks are not implemented")
        return v

    @property
    def time_embed_dim(self) -> int:
        return self.time_embed_mult * self.base_dim

    @property
    def downsample_factor(self) -> int:
        return 2 ** (len(self.dim_mults) - 1)

    def check_grid(self, h: int, w: int) -> None:
        f = self.downsample_factor
        if h % f or w % f:
            raise ValidationException(f"grid {h}x{w} is not divisible by {f} (len(dim_mults)={len(self.dim_mults)})")

    def deviations(self) -> list:
        return ["attention_at_16_omitted"]


@dataclass
class DenoiserParams:
    """All learnable weights in one flat vector, with named views per layer."""

    flat: np.ndarray
    layout: Dict[str, Tuple[int, Tuple[int, ...]]] = field(default_factory=dict)
    init_seed: int = 0

    @property
    def count(self) -> int:
        return int(self.flat.size)

    @property
    def dtype(self) -> np.dtype:
        return self.flat.dtype

    def view(self, name: str) -> np.ndarray:
        offset, shape = self.layout[name]
        size = int(np.prod(shape)) if shape else 1
        return self.flat[offset : offset + size].reshape(shape)

    def names(self) -> Iterator[str]:
        return iter(self.layout)

    def astype(self, dtype) -> "DenoiserParams":
        return DenoiserParams(self.flat.astype(dtype), dict(self.layout), self.init_seed)

    def copy(self) -> "DenoiserParams":
        return DenoiserParams(self.flat.copy(), dict(self.layout), self.init_seed)

    def with_flat(self, flat: np.ndarray) -> "DenoiserParams":
        if flat.shape != self.flat.shape:
            raise ShapeMismatchException("DenoiserParams.with_flat", self.flat.shape, flat.shape)
        return DenoiserParams(flat, self.layout, self.init_seed)
