from __future__ import annotations

from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field

from app.domain.models.training import NormStats


class NormStatsRecord(BaseModel):
    mu: float
    sigma: float

    @classmethod
    def from_stats(cls, stats: NormStats) -> "NormStatsRecord":
        return cls(mu=stats.mu, sigma=stats.sigma)

    def to_stats(self) -> NormStats:
        return NormStats(self.mu, self.sigma)


class ArtifactSidecar(BaseModel):
    """JSON written next to every artifact: enough to regenerate it bit for bit.

    No timestamps or host names; two runs of the same command produce the same sidecar.
    """

    kind: str
    command: str
    argv: List[str]
    seed: int
    preset: Optional[str] = None
    run_config: Dict[str, Any]
    provenance: Dict[str, Dict[str, str]] = Field(default_factory=dict)
    checksums: Dict[str, str] = Field(default_factory=dict)
    inputs: Dict[str, str] = Field(default_factory=dict)  # input artifact path -> its checksum
    stats: Optional[NormStatsRecord] = None
    diagnostics: Dict[str, Any] = Field(default_factory=dict)
    deviations: List[str] = Field(default_factory=list)
    instances: List[Dict[str, Any]] = Field(default_factory=list)
