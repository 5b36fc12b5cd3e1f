from __future__ import annotations

from typing import Protocol

import numpy as np


class EpsilonPredictor(Protocol):
    """Anything the sampler can query for a noise estimate."""

    def __call__(self, x_tau: np.ndarray, x_c: np.ndarray, m_i: np.ndarray, tau: int) -> np.ndarray:
        ...
