from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from app.core.exceptions import ShapeMismatchException

MAGIC = b"SFD1"
MASK_MAGIC = b"MSK1"
FORMAT_VERSION = 1


@dataclass
class FieldContainer:
    """Frames in (traj, frame, row, col) order plus optional bit-packed mask planes."""

    frames: np.ndarray  # float32 (n_traj, n_frames, H, W)
    instance_ids: List[int] = field(default_factory=list)
    m_i: Optional[np.ndarray] = None  # bool (n_pairs, H, W)
    m_o: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.frames.ndim != 4:
            raise ShapeMismatchException("FieldContainer", ("n_traj", "n_frames", "H", "W"), self.frames.shape)
        self.frames = np.ascontiguousarray(self.frames, dtype="<f4")
        if self.m_i is not None or self.m_o is not None:
            if self.m_i is None or self.m_o is None or self.m_i.shape != self.m_o.shape:
                raise ShapeMismatchException(
                    "FieldContainer masks",
                    getattr(self.m_i, "shape", ()),
                    getattr(self.m_o, "shape", ()),
                )
            if self.m_i.shape[1:] != self.frames.shape[2:] or len(self.instance_ids) != self.m_i.shape[0]:
                raise ShapeMismatchException(
                    "FieldContainer masks",
                    (len(self.instance_ids), *self.frames.shape[2:]),
                    self.m_i.shape,
                )

    @classmethod
    def masks_only(cls, m_i: np.ndarray, m_o: np.ndarray, instance_ids: List[int]) -> "FieldContainer":
        h, w = m_i.shape[1:]
        return cls(np.zeros((m_i.shape[0], 0, h, w), dtype="<f4"), list(instance_ids), m_i.astype(bool), m_o.astype(bool))

    @property
    def n_traj(self) -> int:
        return int(self.frames.shape[0])

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[1])

    @property
    def grid(self) -> tuple:
        return tuple(int(s) for s in self.frames.shape[2:])

    @property
    def has_masks(self) -> bool:
        return self.m_i is not None

    def payload_nbytes(self) -> int:
        return payload_nbytes(self.n_traj, self.n_frames, *self.grid)


def payload_nbytes(n_traj: int, n_frames: int, h: int, w: int) -> int:
    return n_traj * n_frames * h * w * 4
