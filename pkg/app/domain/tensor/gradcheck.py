from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from app.core.exceptions import ValidationException
from app.domain.tensor.ops import mul, sum_all
from app.domain.tensor.tensor import Tape, Tensor, parameter


@dataclass
class GradCheckResult:
    max_rel_error: float
    per_input: List[float]
    checked: int


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max|a - n| / max(max|a|, max|n|); 0 when both vanish."""
    scale = max(float(np.max(np.abs(analytic), initial=0.0)), float(np.max(np.abs(numeric), initial=0.0)))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric))) / scale


def check_gradients(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    h: float = 1e-6,
    seed: int = 0,
    max_coords: Optional[int] = None,
    wrt: Optional[Sequence[int]] = None,
) -> GradCheckResult:
    """Compare tape gradients of ``sum(w * fn(*inputs))`` with central differences.

    ``w`` is a fixed random weighting of the output so every output entry is
    exercised. The numeric side replays the recorded tape with perturbed leaf
    values, so ``fn`` is traced once. Inputs must be 64-bit.
    """
    arrays = [np.asarray(a) for a in inputs]
    if any(a.dtype != np.float64 for a in arrays):
        raise ValidationException("gradient checks run in 64-bit")
    rng = np.random.default_rng(seed)
    leaves = [parameter(a) for a in arrays]
    with Tape() as tape:
        out = fn(*leaves)
    weights = rng.uniform(-1.0, 1.0, size=out.shape)

    with tape:
        loss = sum_all(mul(out, Tensor(weights)))
    grads = tape.backward(loss)

    def objective(values: Dict[int, np.ndarray]) -> float:
        return float(np.sum(tape.replay(values)[out.id] * weights))

    per_input: List[float] = []
    checked = 0
    targets = range(len(leaves)) if wrt is None else wrt
    for i in targets:
        leaf = leaves[i]
        analytic = grads[leaf].reshape(-1)
        base = leaf.data.reshape(-1)
        coords = np.arange(base.size)
        if max_coords is not None and base.size > max_coords:
            coords = np.sort(rng.choice(base.size, size=max_coords, replace=False))
        numeric = np.empty(coords.size)
        for j, c in enumerate(coords):
            plus = base.copy()
            plus[c] += h
            minus = base.copy()
            minus[c] -= h
            f_plus = objective({leaf.id: plus.reshape(leaf.shape)})
            f_minus = objective({leaf.id: minus.reshape(leaf.shape)})
            numeric[j] = (f_plus - f_minus) / (2.0 * h)
        per_input.append(relative_error(analytic[coords], numeric))
        checked += coords.size
    return GradCheckResult(max(per_input) if per_input else 0.0, per_input, checked)
