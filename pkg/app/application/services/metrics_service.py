from __future__ import annotations

import logging
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.interpolate import RBFInterpolator
from scipy.spatial.distance import cdist

from app.application.services.base import BaseServiceImpl
from app.core.config import Settings
from app.core.exceptions import InterpolationException, ShapeMismatchException, ValidationException
from app.domain.models.inference import EvalConfig
from app.domain.models.reports import CRPSReport, RegionScore

logger = logging.getLogger(__name__)

RBF_JITTER = 1e-8

REGION_INPUT = "m_i"
REGION_TARGET_ONLY = "m_o_minus_m_i"
REGION_OVERLAP = "m_i_and_m_o"
REGION_VOID = "void"
REGION_FULL = "full"


def _target_pixels(target: np.ndarray, m_o: np.ndarray) -> np.ndarray:
    if target.shape != m_o.shape:
        raise ShapeMismatchException("metric target/mask", target.shape, m_o.shape)
    idx = m_o.astype(bool)
    if not idx.any():
        raise ValidationException("target mask is empty")
    return idx


def masked_mse(pred: np.ndarray, target: np.ndarray, m_o: np.ndarray) -> float:
    idx = _target_pixels(target, m_o)
    return float(np.mean((pred[idx] - target[idx]) ** 2))


def masked_mae(pred: np.ndarray, target: np.ndarray, m_o: np.ndarray) -> float:
    idx = _target_pixels(target, m_o)
    return float(np.mean(np.abs(pred[idx] - target[idx])))


def crps_pixelwise(members: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Fair ensemble CRPS at every pixel: E|X - y| - sum_{k<l}|X_k - X_l| / (K(K-1))."""
    k = members.shape[0]
    mae = np.mean(np.abs(members - target[None]), axis=0)
    if k == 1:
        return mae
    ranked = np.sort(members, axis=0)
    coeff = (2.0 * np.arange(k) - k + 1.0).reshape((k,) + (1,) * target.ndim)
    pair_sum = np.sum(coeff * ranked, axis=0)
    return mae - pair_sum / (k * (k - 1))


def crps_mc(members: np.ndarray, target: np.ndarray, m_o: np.ndarray) -> float:
    """Fair ensemble CRPS averaged over M_o; one member reduces to masked MAE."""
    if members.ndim != target.ndim + 1 or members.shape[1:] != target.shape:
        raise ShapeMismatchException("crps_mc", ("K", *target.shape), members.shape)
    if members.shape[0] < 1:
        raise ValidationException("ensemble is empty")
    if members.shape[0] == 1:
        return masked_mae(members[0], target, m_o)
    idx = _target_pixels(target, m_o)
    return float(np.mean(crps_pixelwise(members[:, idx], target[idx])))


def _observed(x_c: np.ndarray, m_i: np.ndarray) -> np.ndarray:
    if x_c.shape != m_i.shape:
        raise ShapeMismatchException("pre-interpolation", x_c.shape, m_i.shape)
    obs = np.flatnonzero(m_i.astype(bool).reshape(-1))
    if obs.size == 0:
        raise ValidationException("conditioning mask is empty; nothing to interpolate from")
    return obs


def _pixel_coords(shape) -> np.ndarray:
    rows, cols = np.indices(shape)
    return np.column_stack([rows.reshape(-1), cols.reshape(-1)]).astype(np.float64)


def preinterp_nn(x_c: np.ndarray, m_i: np.ndarray) -> np.ndarray:
    """Each pixel copies the nearest observed pixel; ties go to the lowest linear index."""
    obs = _observed(x_c, m_i)
    coords = _pixel_coords(x_c.shape)
    nearest = np.argmin(cdist(coords, coords[obs], metric="sqeuclidean"), axis=1)
    return x_c.reshape(-1)[obs][nearest].reshape(x_c.shape)


def median_sensor_spacing(m_i: np.ndarray) -> float:
    """Median nearest-neighbour distance between observed pixels (1.0 for a single sensor)."""
    obs = np.flatnonzero(m_i.astype(bool).reshape(-1))
    if obs.size < 2:
        return 1.0
    pts = _pixel_coords(m_i.shape)[obs]
    d = cdist(pts, pts)
    np.fill_diagonal(d, np.inf)
    return float(np.median(d.min(axis=1)))


def preinterp_rbf(x_c: np.ndarray, m_i: np.ndarray, shape_param: Optional[float] = None) -> np.ndarray:
    """Gaussian-kernel interpolation through the observed values, evaluated on the full grid.

    ``shape_param`` is the kernel length scale in pixels; by default the median
    sensor spacing. A singular collocation system is retried once with a small
    ridge before giving up.
    """
    obs = _observed(x_c, m_i)
    coords = _pixel_coords(x_c.shape)
    length = shape_param or median_sensor_spacing(m_i)
    values = x_c.reshape(-1)[obs].astype(np.float64)
    last_error: Optional[Exception] = None
    for smoothing in (0.0, RBF_JITTER):
        try:
            rbf = RBFInterpolator(
                coords[obs], values, kernel="gaussian", epsilon=1.0 / length, degree=-1, smoothing=smoothing
            )
            out = rbf(coords).reshape(x_c.shape)
        except np.linalg.LinAlgError as exc:
            last_error = exc
            logger.debug("RBF system singular with smoothing=%g", smoothing)
            continue
        if np.all(np.isfinite(out)):
            return out
    raise InterpolationException(f"RBF collocation system is singular ({last_error})")


def persistence_baseline(x_c: np.ndarray, m_i: np.ndarray) -> np.ndarray:
    """Copy the conditioning forward, voids filled by nearest neighbour."""
    return preinterp_nn(x_c, m_i)


def zero_field_baseline(shape, mu: float) -> np.ndarray:
    """Predict the normalization mean everywhere."""
    return np.full(shape, float(mu))


class MetricsService(BaseServiceImpl[EvalConfig]):
    def __init__(self, config: Optional[EvalConfig] = None, settings: Optional[Settings] = None):
        super().__init__(config or EvalConfig(), settings)

    def crps_report(
        self,
        ensembles: Sequence[np.ndarray],
        targets: Sequence[np.ndarray],
        m_i: Sequence[np.ndarray],
        m_o: Sequence[np.ndarray],
        dense_truth: bool = False,
    ) -> CRPSReport:
        """Per-instance CRPS over M_o plus pooled region scores.

        With dense truth (simulation) the regions are M_i, M_o minus M_i, void and
        the full grid. Without it only supervised pixels are scored and the full
        grid is refused.
        """
        if not (len(ensembles) == len(targets) == len(m_i) == len(m_o)) or not ensembles:
            raise ValidationException("crps_report needs equal, nonempty numbers of ensembles, targets and masks")
        ks = {int(e.shape[0]) for e in ensembles}
        if len(ks) != 1:
            raise ValidationException(f"ensembles have different sizes: {sorted(ks)}")
        per_instance: List[float] = []
        per_mse: List[float] = []
        counts: List[int] = []
        sums: Dict[str, float] = {}
        pix: Dict[str, int] = {}
        for members, target, mi, mo in zip(ensembles, targets, m_i, m_o):
            mi = mi.astype(bool)
            mo = mo.astype(bool)
            per_instance.append(crps_mc(members, target, mo))
            per_mse.append(masked_mse(members.mean(axis=0), target, mo))
            counts.append(int(mo.sum()))
            pixel = crps_pixelwise(members, target)
            if dense_truth:
                regions = {
                    REGION_INPUT: mi,
                    REGION_TARGET_ONLY: mo & ~mi,
                    REGION_VOID: ~(mi | mo),
                    REGION_FULL: np.ones_like(mo),
                }
            else:
                regions = {REGION_TARGET_ONLY: mo & ~mi, REGION_OVERLAP: mo & mi}
            for name, region in regions.items():
                sums[name] = sums.get(name, 0.0) + float(pixel[region].sum())
                pix[name] = pix.get(name, 0) + int(region.sum())
        scores = {
            name: RegionScore(sums[name] / pix[name], pix[name]) for name in sums if pix[name] > 0
        }
        report = CRPSReport(per_instance, ks.pop(), counts, scores, per_mse, dense_truth)
        logger.info("CRPS %.5f over %d instances (K=%d)", report.aggregate, len(per_instance), report.k)
        return report

    @staticmethod
    def full_grid_crps(members: np.ndarray, target: np.ndarray, dense_truth: bool) -> float:
        if not dense_truth:
            raise ValidationException("full-grid scores need dense ground truth; sparse-only data fills voids")
        return float(np.mean(crps_pixelwise(members, target)))
