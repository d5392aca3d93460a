from enum import Enum
from typing import Any

import numpy as np
from pydantic import Field, model_validator

from theme_detection.model.model import BaseModel
from theme_detection.types import Float64Array, Int64Array

NOISE = -1


class ClusterAlgorithm(str, Enum):
    KMEANS = "kmeans"
    HDBSCAN = "hdbscan"


class ClusterModel(BaseModel):
    """Fitted clustering: centroids plus an assignment per unit. Label -1 is noise."""

    algorithm: ClusterAlgorithm = Field(..., description="Algorithm that produced the model")
    centroids: Float64Array = Field(..., description="n_clusters x dim centroid matrix")
    assignments: dict[str, int] = Field(..., description="Unit ID -> cluster index or -1")
    seed: int = Field(0, description="Seed the model was fitted with")
    params: dict[str, Any] = Field(default_factory=dict, description="Fit parameters")

    @model_validator(mode="after")
    def validate_assignments(self) -> "ClusterModel":
        if self.centroids.ndim != 2:
            raise ValueError("centroids must be a matrix")
        n_clusters = self.centroids.shape[0]
        for unit_id, label in self.assignments.items():
            if not NOISE <= label < n_clusters:
                raise ValueError(f"assignment {unit_id!r} -> {label} outside [-1, {n_clusters})")
        return self

    @property
    def n_clusters(self) -> int:
        return int(self.centroids.shape[0])

    @property
    def dim(self) -> int:
        return int(self.centroids.shape[1])

    @property
    def noise_count(self) -> int:
        return sum(1 for label in self.assignments.values() if label == NOISE)

    def sizes(self) -> np.ndarray:
        labels = np.fromiter(self.assignments.values(), dtype=np.int64, count=len(self.assignments))
        return np.bincount(labels[labels != NOISE], minlength=self.n_clusters)


class KMeansModel(ClusterModel):
    algorithm: ClusterAlgorithm = ClusterAlgorithm.KMEANS
    iterations_run: int = Field(..., description="Lloyd iterations of the winning restart", ge=0)
    distortion: float = Field(..., description="Final sum of squared distances to centroids", ge=0)
    distortion_history: list[float] = Field(
        default_factory=list,
        description="Distortion after every assignment and update step",
    )

    @property
    def k(self) -> int:
        return self.n_clusters


class HdbscanModel(ClusterModel):
    algorithm: ClusterAlgorithm = ClusterAlgorithm.HDBSCAN
    min_cluster_size: int = Field(5, ge=2)
    min_samples: int = Field(3, ge=1)


class ElbowResult(BaseModel):
    k_grid: list[int] = Field(..., description="Evaluated k values")
    distortions: list[list[float]] = Field(..., description="Distortion per trial per k")
    inflections: list[int] = Field(..., description="Inflection point of every trial")
    chosen_k: int = Field(..., description="Modal inflection point, ties to the smaller k")

    @model_validator(mode="after")
    def validate_choice(self) -> "ElbowResult":
        if self.chosen_k not in self.k_grid:
            raise ValueError("chosen_k must be on the grid")
        return self


class HdbscanTree(BaseModel):
    """Intermediate products of an HDBSCAN fit, kept for inspection."""

    core_distances: Float64Array
    mst: Float64Array = Field(
        ..., description="(n-1) x 3 rows of (node, node, mutual reachability)"
    )
    single_linkage: Float64Array = Field(
        ..., description="(n-1) x 4 rows of (left, right, distance, size)"
    )
    condensed: Float64Array = Field(..., description="Rows of (parent, child, lambda, size)")
    stability: dict[int, float] = Field(default_factory=dict)
    selected: list[int] = Field(default_factory=list, description="Selected condensed cluster ids")
    labels: Int64Array
