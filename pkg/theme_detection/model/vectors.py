import numpy as np
import scipy.sparse as sp
from pydantic import ConfigDict, Field, field_validator, model_validator

from theme_detection.model.model import BaseModel
from theme_detection.types import Float64Array


class TfidfConfig(BaseModel):
    ngram_range: tuple[int, int] = Field((1, 2), description="Inclusive ngram length range")
    min_df: int = Field(2, description="Minimal document frequency of a kept ngram", ge=1)
    lowercase: bool = Field(True, description="Lowercase before tokenization")

    @field_validator("ngram_range")
    @classmethod
    def validate_ngram_range(cls, v: tuple[int, int]) -> tuple[int, int]:
        low, high = v
        if low < 1 or high < low:
            raise ValueError("ngram_range must satisfy 1 <= low <= high")
        return v


class TfidfModel(BaseModel):
    """Fitted TF-IDF vocabulary and weights. Immutable after fit."""

    model_config = ConfigDict(frozen=True)

    vocabulary: dict[str, int] = Field(..., description="Ngram -> column index")
    idf: Float64Array = Field(..., description="Per-column inverse document frequency")
    config: TfidfConfig = Field(default_factory=TfidfConfig)
    n_documents: int = Field(..., description="Documents seen at fit time", ge=1)

    @model_validator(mode="after")
    def validate_columns(self) -> "TfidfModel":
        if sorted(self.vocabulary.values()) != list(range(len(self.vocabulary))):
            raise ValueError("vocabulary indices must be dense in [0, |V|)")
        if self.idf.shape != (len(self.vocabulary),):
            raise ValueError("idf must have one weight per vocabulary entry")
        if not (np.isfinite(self.idf).all() and (self.idf > 0).all()):
            raise ValueError("idf weights must be finite and positive")
        return self

    @property
    def dim(self) -> int:
        return len(self.vocabulary)


class VectorSet(BaseModel):
    """Id-aligned vectors, one row per id. Rows are a dense array or a CSR matrix."""

    ids: list[str] = Field(..., description="Unit IDs in row order")
    vectors: np.ndarray | sp.csr_matrix = Field(..., description="Row vectors")
    normalized: bool = Field(False, description="Nonzero rows have unit L2 norm")

    @model_validator(mode="after")
    def validate_shape(self) -> "VectorSet":
        if self.vectors.ndim != 2:
            raise ValueError("vectors must be two-dimensional")
        if self.vectors.shape[0] != len(self.ids):
            raise ValueError(f"{len(self.ids)} ids for {self.vectors.shape[0]} vectors")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("ids must be unique")
        return self

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.vectors)

    def row_norms(self) -> np.ndarray:
        if self.is_sparse:
            return np.sqrt(np.asarray(self.vectors.multiply(self.vectors).sum(axis=1)).ravel())
        return np.linalg.norm(self.vectors, axis=1)

    def nonzero_mask(self) -> np.ndarray:
        return self.row_norms() > 0

    def dense(self) -> np.ndarray:
        """Rows as a float64 array."""

        if self.is_sparse:
            return self.vectors.toarray().astype(np.float64, copy=False)
        return np.asarray(self.vectors, dtype=np.float64)

    def select(self, mask: np.ndarray) -> "VectorSet":
        indices = np.flatnonzero(mask)
        return VectorSet(
            ids=[self.ids[i] for i in indices],
            vectors=self.vectors[indices],
            normalized=self.normalized,
        )
