from __future__ import annotations

import io
import json
import logging
from pathlib import Path
from typing import Any, Dict, Sequence, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from PIL import Image  # noqa: E402
from pydantic import BaseModel  # noqa: E402

from app.core.exceptions import ValidationException  # noqa: E402
from app.domain.interfaces.repository import PathLike  # noqa: E402
from app.domain.models.reports import DistanceProfile  # noqa: E402
from app.infrastructure.repositories.base import FileRepository, checksum_hex  # noqa: E402

logger = logging.getLogger(__name__)

PNG_LEVELS = 65535

JsonDocument = Union[BaseModel, Dict[str, Any]]


def sidecar_path(artifact: PathLike) -> Path:
    """dataset.sfd -> dataset.sfd.json"""
    p = Path(artifact)
    return p.with_name(f"{p.name}.json")


def colorbar_path(png: PathLike) -> Path:
    p = Path(png)
    return p.with_name(f"{p.stem}.colorbar.json")


def quantize16(field: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Linear map of [min, max] onto 0..65535; a constant field maps to 0."""
    field = np.asarray(field, dtype=np.float64)
    if field.ndim != 2 or not np.all(np.isfinite(field)):
        raise ValidationException("PNG export needs a finite 2-D field")
    vmin, vmax = float(field.min()), float(field.max())
    span = vmax - vmin
    if span == 0.0:
        return np.zeros(field.shape, dtype=np.uint16), vmin, vmax
    levels = np.rint((field - vmin) / span * PNG_LEVELS)
    return levels.astype(np.uint16), vmin, vmax


class ReportRepository(FileRepository[Dict[str, Any]]):
    """JSON summaries and sidecars, CSV tables, 16-bit PNG fields and static plots."""

    def save(self, entity: JsonDocument, path: PathLike) -> str:
        if isinstance(entity, BaseModel):
            text = entity.model_dump_json(indent=2)
        else:
            text = json.dumps(entity, indent=2, sort_keys=True)
        data = (text + "\n").encode("utf-8")
        self.write_bytes(path, data)
        return checksum_hex(data)

    def load(self, path: PathLike) -> Dict[str, Any]:
        try:
            document = json.loads(self.read_bytes(path).decode("utf-8"))
        except json.JSONDecodeError as e:
            raise ValidationException(f"{path} is not valid JSON: {e}")
        if not isinstance(document, dict):
            raise ValidationException(f"{path} must hold a JSON object")
        return document

    def save_table(self, table: pd.DataFrame, path: PathLike) -> str:
        data = table.to_csv(index=False, lineterminator="\n").encode("utf-8")
        self.write_bytes(path, data)
        logger.info("table %s (%d rows)", path, len(table))
        return checksum_hex(data)

    def save_png16(self, field: np.ndarray, path: PathLike, label: str = "") -> str:
        """Grayscale 16-bit PNG plus a JSON colorbar mapping levels back to values."""
        levels, vmin, vmax = quantize16(field)
        buf = io.BytesIO()
        Image.fromarray(levels.astype("<u2")).save(buf, format="PNG")
        self.write_bytes(path, buf.getvalue())
        self.save(
            {"label": label, "bits": 16, "vmin": vmin, "vmax": vmax, "levels": PNG_LEVELS},
            colorbar_path(path),
        )
        return checksum_hex(buf.getvalue())

    def _save_figure(self, fig, path: PathLike) -> str:
        buf = io.BytesIO()
        fig.savefig(buf, format="png", bbox_inches="tight", dpi=120, metadata={"Software": None})
        plt.close(fig)
        self.write_bytes(path, buf.getvalue())
        return checksum_hex(buf.getvalue())

    def save_distance_plot(self, profile: DistanceProfile, path: PathLike) -> str:
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        ax.plot(profile.bin_centers, profile.mean_sigma, marker="o")
        ax.set_xlabel("distance to nearest sensor (pixels)")
        ax.set_ylabel("mean ensemble std")
        return self._save_figure(fig, path)

    def save_scatter_plot(self, sigma: Sequence[float], error: Sequence[float], path: PathLike) -> str:
        fig, ax = plt.subplots(figsize=(4.0, 4.0))
        ax.scatter(sigma, error, s=2, alpha=0.3)
        ax.set_xlabel("ensemble std")
        ax.set_ylabel("|mean - truth|")
        return self._save_figure(fig, path)

    def save_spread_plot(self, mean_sigma: Sequence[Sequence[float]], path: PathLike) -> str:
        """One line per instance: spatially averaged std against horizon."""
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        for row in mean_sigma:
            ax.plot(range(1, len(row) + 1), row, color="0.5", alpha=0.4)
        if len(mean_sigma):
            ax.plot(range(1, len(mean_sigma[0]) + 1), np.mean(np.asarray(mean_sigma), axis=0), color="k", marker="o")
        ax.set_xlabel("horizon")
        ax.set_ylabel("mean ensemble std")
        return self._save_figure(fig, path)
