from typing import Any

from pydantic import Field

from theme_detection.model.model import BaseModel


class RunManifest(BaseModel):
    """Everything needed to audit or reproduce one pipeline run."""

    name: str = Field(..., description="Run name.")
    config: dict[str, Any] = Field(..., description="Validated configuration snapshot.")
    seeds: dict[str, int] = Field(..., description="Seeds by purpose: split, cluster.")
    stage_keys: dict[str, str] = Field(default_factory=dict, description="Stage cache keys.")
    artifact_hashes: dict[str, str] = Field(
        default_factory=dict,
        description="Output file name relative to the run directory -> content digest.",
    )
    outputs: dict[str, str] = Field(default_factory=dict, description="Output name -> path.")
    timings: dict[str, float] = Field(default_factory=dict, description="Stage wall time, seconds.")
    cached: list[str] = Field(default_factory=list, description="Stages served from the cache.")

    split_digest: str | None = Field(None, description="Digest of the split manifest.")
    encoder: str | None = None
    clusterer: str | None = None
    representation: str | None = None
    max_n: int | None = None
    k: int | None = Field(None, description="Clusters used at evaluation.")
    micro_f1: float | None = None
    macro_f1: float | None = None

    @property
    def complete(self) -> bool:
        return self.micro_f1 is not None
