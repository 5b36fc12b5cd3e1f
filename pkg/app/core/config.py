from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from pydantic_settings import BaseSettings, SettingsConfigDict

from app.core.exceptions import NotFoundException, ValidationException
from app.domain.models.base import ConfigModel, iter_provenance
from app.domain.models.denoiser import DenoiserConfig
from app.domain.models.diffusion import DiffusionConfig
from app.domain.models.inference import EvalConfig
from app.domain.models.masks import ScenarioSpec
from app.domain.models.simulation import GRFSpec, NSConfig
from app.domain.models.training import LossConfig, OptimConfig


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        case_sensitive=True,
        env_file=".env",
        env_prefix="SFD_",
        extra="ignore",
    )

    PROJECT_NAME: str = "sparse-field-diffusion"
    VERSION: str = "1.0.0"

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: str = "%(asctime)s %(levelname)s %(name)s: %(message)s"

    # Thread-pool width for per-example tapes and ensemble members
    WORKERS: int = 1

    DEFAULT_OUTPUT_DIR: str = "runs"


settings = Settings()


class RunConfig(ConfigModel):
    simulation: NSConfig = NSConfig()
    grf: GRFSpec = GRFSpec()
    scenario: ScenarioSpec = ScenarioSpec()
    diffusion: DiffusionConfig = DiffusionConfig()
    net: DenoiserConfig = DenoiserConfig()
    loss: LossConfig = LossConfig()
    optimizer: OptimConfig = OptimConfig()
    eval: EvalConfig = EvalConfig()

    def with_overrides(self, overrides: Mapping[str, Any]) -> "RunConfig":
        """Apply dotted-path overrides ("optimizer.steps": 10) and re-validate."""
        data = self.model_dump(mode="json")
        for dotted, value in overrides.items():
            if value is None:
                continue
            section, _, key = dotted.partition(".")
            if section not in data or not key:
                raise ValidationException(f"unknown configuration key: {dotted}")
            data[section][key] = value
        return RunConfig.model_validate(data)


PRESETS: Dict[str, Dict[str, Dict[str, Any]]] = {
    "toy": {
        "simulation": {"grid_n": 16, "n_traj": 200},
        "net": {"base_dim": 32},
        "optimizer": {"batch_size": 32, "steps": 5000, "log_every": 100, "checkpoint_every": 1000},
        "eval": {"k": 20},
    },
    "paper-ns": {},
}


def _deep_merge(base: Dict[str, Any], extra: Mapping[str, Any]) -> Dict[str, Any]:
    out = dict(base)
    for key, value in extra.items():
        if isinstance(value, Mapping) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def load_run_config(
    preset: Optional[str] = None,
    config_path: Optional[str | Path] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    """Preset, then the JSON document, then flag overrides; later sources win."""
    data: Dict[str, Any] = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ValidationException(f"unknown preset '{preset}' (choose from {sorted(PRESETS)})")
        data = _deep_merge(data, PRESETS[preset])
    if config_path is not None:
        path = Path(config_path)
        if not path.is_file():
            raise NotFoundException(f"config file not found: {path}")
        try:
            document = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValidationException(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(document, dict):
            raise ValidationException(f"config file {path} must hold a JSON object")
        data = _deep_merge(data, document)
    config = RunConfig.model_validate(data)
    if overrides:
        config = config.with_overrides(overrides)
    return config


def config_provenance() -> Dict[str, Dict[str, str]]:
    """Dotted field path -> {source, rationale} for the whole run configuration."""
    return {path: {"source": src, "rationale": why} for path, src, why in iter_provenance(RunConfig)}
