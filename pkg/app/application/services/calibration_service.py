from __future__ import annotations

import logging
import warnings
from typing import List, Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.stats import pearsonr, spearmanr

from app.application.services.base import BaseServiceImpl
from app.application.services.inference_service import uncertainty_map
from app.application.services.metrics_service import crps_mc
from app.core.config import Settings
from app.core.exceptions import ShapeMismatchException, ValidationException
from app.domain.models.inference import Ensemble, EvalConfig
from app.domain.models.reports import CalibrationReport, CorrelationPair, DistanceProfile

logger = logging.getLogger(__name__)


def _finite_or_none(value: float) -> Optional[float]:
    value = float(value)
    return value if np.isfinite(value) else None


def correlation_pair(x: Sequence[float], y: Sequence[float]) -> CorrelationPair:
    """Pearson and Spearman of two samples; undefined correlations come back as None, never 0."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ShapeMismatchException("correlation", x.shape, y.shape)
    n = int(x.size)
    if n < 2 or np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
        return CorrelationPair(None, None, n)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        pearson = pearsonr(x, y)[0]
        spearman = spearmanr(x, y)[0]
    return CorrelationPair(_finite_or_none(pearson), _finite_or_none(spearman), n)


def distance_to_sensor(m_i: np.ndarray) -> np.ndarray:
    """Euclidean pixel distance to the nearest conditioning pixel (0 on sensors)."""
    observed = np.asarray(m_i).astype(bool)
    if not observed.any():
        raise ValidationException("conditioning mask is empty; distance to sensor is undefined")
    return ndimage.distance_transform_edt(~observed)


def distance_profile(distances: np.ndarray, sigma: np.ndarray, n_bins: int) -> DistanceProfile:
    """Equal-count bins over sorted distances; mean sigma per bin and the trend across bins."""
    d = np.asarray(distances, dtype=np.float64).reshape(-1)
    s = np.asarray(sigma, dtype=np.float64).reshape(-1)
    if d.shape != s.shape:
        raise ShapeMismatchException("distance_profile", d.shape, s.shape)
    if d.size == 0:
        raise ValidationException("no pixels to profile")
    order = np.argsort(d, kind="stable")
    chunks = [c for c in np.array_split(order, min(n_bins, d.size)) if c.size]
    edges = [float(d[chunks[0][0]])] + [float(d[c[-1]]) for c in chunks]
    centers = [float(d[c].mean()) for c in chunks]
    means = [float(s[c].mean()) for c in chunks]
    counts = [int(c.size) for c in chunks]
    trend = correlation_pair(centers, means).spearman
    return DistanceProfile(edges, centers, means, counts, trend)


class CalibrationService(BaseServiceImpl[EvalConfig]):
    """Does ensemble spread track the error it makes?"""

    def __init__(self, config: Optional[EvalConfig] = None, settings: Optional[Settings] = None):
        super().__init__(config or EvalConfig(), settings)

    def calibration(
        self,
        ensembles: Sequence[Ensemble],
        targets: Sequence[np.ndarray],
        m_o: Sequence[np.ndarray],
        m_i: Sequence[np.ndarray],
    ) -> CalibrationReport:
        """Per-pixel sigma vs |error| pooled over M_o, per-instance mean sigma vs CRPS, and the distance profile.

        The distance profile pools every grid pixel: sigma needs no ground truth.
        """
        if not (len(ensembles) == len(targets) == len(m_o) == len(m_i)) or not ensembles:
            raise ValidationException("calibration needs equal, nonempty numbers of ensembles, targets and masks")
        pixel_sigma: List[np.ndarray] = []
        pixel_error: List[np.ndarray] = []
        instance_sigma: List[float] = []
        instance_crps: List[float] = []
        all_dist: List[np.ndarray] = []
        all_sigma: List[np.ndarray] = []
        for ensemble, target, mo, mi in zip(ensembles, targets, m_o, m_i):
            if target.shape != ensemble.members.shape[1:]:
                raise ShapeMismatchException("calibration target", ensemble.members.shape[1:], target.shape)
            unc = uncertainty_map(ensemble)
            idx = np.asarray(mo).astype(bool)
            if not idx.any():
                raise ValidationException("target mask is empty")
            pixel_sigma.append(unc.sigma[idx])
            pixel_error.append(np.abs(unc.mean - target)[idx])
            instance_sigma.append(float(unc.sigma[idx].mean()))
            instance_crps.append(crps_mc(ensemble.members, target, idx))
            all_dist.append(distance_to_sensor(mi).reshape(-1))
            all_sigma.append(unc.sigma.reshape(-1))

        scatter_sigma = np.concatenate(pixel_sigma)
        scatter_error = np.concatenate(pixel_error)
        report = CalibrationReport(
            per_pixel=correlation_pair(scatter_sigma, scatter_error),
            per_instance=correlation_pair(instance_sigma, instance_crps),
            distance=distance_profile(np.concatenate(all_dist), np.concatenate(all_sigma), self.config.distance_bins),
            scatter_sigma=scatter_sigma.tolist(),
            scatter_error=scatter_error.tolist(),
        )
        logger.info(
            "calibration: per-pixel spearman %s, per-instance spearman %s, distance trend %s",
            report.per_pixel.spearman, report.per_instance.spearman, report.distance.trend_spearman,
        )
        return report
