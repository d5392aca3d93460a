import itertools
import logging
import os
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Any, Mapping

import yaml
from pydantic import Field, ValidationError, model_validator

from theme_detection.corpus import CorpusFormat
from theme_detection.errors import ConfigError
from theme_detection.model.cluster import ClusterAlgorithm
from theme_detection.model.model import BaseModel
from theme_detection.model.vectors import TfidfConfig

LOG = logging.getLogger(__name__)

ENV_PREFIX = "THEME_DETECTION_"

ENV_OVERRIDES: dict[str, tuple[str, ...]] = {
    "CORPUS_PATH": ("corpus", "path"),
    "ALLOWLIST_PATH": ("tags", "allowlist_path"),
    "SRL_PATH": ("represent", "srl_path"),
    "COREF_PATH": ("represent", "coref_path"),
    "LEXICON_PATH": ("represent", "lexicon_path"),
    "EMBEDDINGS_PATH": ("encoder", "embeddings_path"),
    "ENCODER_ENDPOINT": ("encoder", "endpoint"),
    "OUT_DIR": ("out_dir",),
    "CACHE_DIR": ("cache_dir",),
}

# Resolved against the config file's directory when relative.
PATH_FIELDS: tuple[tuple[str, ...], ...] = (
    ("corpus", "path"),
    ("tags", "allowlist_path"),
    ("represent", "srl_path"),
    ("represent", "coref_path"),
    ("represent", "lexicon_path"),
    ("encoder", "embeddings_path"),
    ("out_dir",),
    ("cache_dir",),
)


class Representation(str, Enum):
    SENTENCE = "sentence"
    SRL = "srl"


class EncoderKind(str, Enum):
    TFIDF = "tfidf"
    EMBEDDING_FILE = "embedding-file"
    ENCODER_ENDPOINT = "encoder-endpoint"


class CorpusConfig(BaseModel):
    path: Path = Field(..., description="Corpus file.")
    format: CorpusFormat = Field(CorpusFormat.JSONL, description="Corpus file format.")
    created_after: datetime | None = Field(None, description="Inclusive lower creation bound.")
    created_before: datetime | None = Field(None, description="Exclusive upper creation bound.")


class TagsConfig(BaseModel):
    min_support: int = Field(50, description="Minimal questions per tag.", ge=1)
    allowlist_path: Path | None = Field(None, description="Curated tags, one per line.")


class SplitConfig(BaseModel):
    ratio: float = Field(0.8, description="Train fraction.", gt=0, lt=1)
    seed: int | None = Field(None, description="Split seed. Defaults to the run seed.")


class RepresentConfig(BaseModel):
    max_n: int = Field(5, description="Sentences kept per question.", ge=1, le=5)
    representation: Representation = Representation.SENTENCE
    srl_path: Path | None = Field(None, description="SRL annotation JSONL.")
    coref_path: Path | None = Field(None, description="Coreference annotation JSONL.")
    lexicon_path: Path | None = Field(None, description="Lemma TSV; the bundled one if empty.")
    resolve_pronouns: bool = Field(True, description="Apply coreference chains when given.")


class EncoderConfig(BaseModel):
    kind: EncoderKind = EncoderKind.TFIDF
    name: str | None = Field(None, description="Encoder name recorded in run metadata.")
    tfidf: TfidfConfig = Field(default_factory=TfidfConfig)
    embeddings_path: Path | None = Field(None, description="EMB1 file with precomputed vectors.")
    endpoint: str | None = Field(None, description="Encoder service URL.")
    timeout: float = Field(30.0, gt=0)
    batch_size: int = Field(64, ge=1)
    max_in_flight: int = Field(4, ge=1)
    retries: int = Field(3, ge=0)
    backoff: float = Field(0.5, ge=0)

    @property
    def label(self) -> str:
        return self.name or self.kind.value


class ElbowConfig(BaseModel):
    k_start: int = Field(100, ge=1)
    k_step: int = Field(100, ge=1)
    k_max: int = Field(1000, ge=1)
    trials: int = Field(5, ge=1)


class ClusterConfig(BaseModel):
    algorithm: ClusterAlgorithm = ClusterAlgorithm.KMEANS
    k: int | None = Field(None, description="Cluster count; chosen by the elbow when empty.", ge=1)
    elbow: ElbowConfig | None = None
    max_iter: int = Field(300, ge=1)
    tol: float = Field(1e-4, ge=0)
    n_init: int = Field(1, ge=1)
    min_cluster_size: int = Field(5, ge=2)
    min_samples: int = Field(3, ge=1)
    allow_single_cluster: bool = False


class EvaluateConfig(BaseModel):
    top_m: int = Field(5, description="Tags in the confusion matrix.", ge=1)
    top_n: int = Field(3, description="Exemplars per cluster.", ge=1)
    normalize_by_prior: bool = False


class GridConfig(BaseModel):
    max_n: list[int] | None = None
    clusterer: list[ClusterAlgorithm] | None = None
    encoder: list[EncoderKind] | None = None
    representation: list[Representation] | None = None


class RunConfig(BaseModel):
    name: str = Field("run", description="Run name, used for the output directory.")
    seed: int = 0
    workers: int = Field(1, ge=1)
    out_dir: Path = Path("out")
    cache_dir: Path | None = Field(None, description="Stage cache; in memory when empty.")
    log_level: str = "INFO"

    corpus: CorpusConfig
    tags: TagsConfig = Field(default_factory=TagsConfig)
    split: SplitConfig = Field(default_factory=SplitConfig)
    represent: RepresentConfig = Field(default_factory=RepresentConfig)
    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    cluster: ClusterConfig = Field(default_factory=ClusterConfig)
    evaluate: EvaluateConfig = Field(default_factory=EvaluateConfig)
    grid: GridConfig | None = None

    @model_validator(mode="after")
    def check_sections(self) -> "RunConfig":
        if self.represent.representation == Representation.SRL and self.represent.srl_path is None:
            raise ValueError("srl representation requires represent.srl_path")
        if self.encoder.kind == EncoderKind.EMBEDDING_FILE and self.encoder.embeddings_path is None:
            raise ValueError("embedding-file encoder requires encoder.embeddings_path")
        if self.encoder.kind == EncoderKind.ENCODER_ENDPOINT and not self.encoder.endpoint:
            raise ValueError("encoder-endpoint encoder requires encoder.endpoint")
        if (
            self.cluster.algorithm == ClusterAlgorithm.KMEANS
            and self.cluster.k is None
            and self.cluster.elbow is None
        ):
            raise ValueError("kmeans requires cluster.k or cluster.elbow")
        return self

    @property
    def split_seed(self) -> int:
        return self.split.seed if self.split.seed is not None else self.seed

    @property
    def run_dir(self) -> Path:
        return self.out_dir / self.name

    def cells(self) -> list["RunConfig"]:
        """One config per grid cell, or just this one without a grid."""

        if self.grid is None:
            return [self]

        axes = [
            self.grid.max_n or [self.represent.max_n],
            self.grid.clusterer or [self.cluster.algorithm],
            self.grid.encoder or [self.encoder.kind],
            self.grid.representation or [self.represent.representation],
        ]

        cells = []
        for max_n, clusterer, encoder, representation in itertools.product(*axes):
            data = self.model_dump(mode="json", exclude={"grid"})
            data["name"] = "-".join(
                [self.name, f"n{max_n}", clusterer.value, encoder.value, representation.value]
            )
            data["represent"].update(max_n=max_n, representation=representation.value)
            data["cluster"]["algorithm"] = clusterer.value
            data["encoder"]["kind"] = encoder.value
            cells.append(validate_config(data))
        return cells


def _get(data: Mapping[str, Any], path: tuple[str, ...]) -> Any:
    for part in path:
        if not isinstance(data, Mapping) or part not in data:
            return None
        data = data[part]
    return data


def _set(data: dict[str, Any], path: tuple[str, ...], value: Any) -> None:
    for part in path[:-1]:
        section = data.get(part)
        if not isinstance(section, dict):
            section = data[part] = {}
        data = section
    data[path[-1]] = value


def validate_config(data: Mapping[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(map(str, err['loc'])) or 'config'}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"invalid configuration: {problems}") from e


def load_config(
    path: Path | str,
    env: Mapping[str, str] | None = None,
    overrides: Mapping[str, Any] | None = None,
) -> RunConfig:
    """Read a YAML run configuration.

    Relative paths in the file resolve against its directory. `THEME_DETECTION_*` environment
    variables replace paths and the encoder endpoint, then `overrides` replace top-level keys.

    :raises ConfigError: The file is missing, unparsable or invalid.
    """

    path = Path(path)
    env = os.environ if env is None else env

    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except OSError as e:
        raise ConfigError(f"cannot read configuration {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"invalid YAML in {path}: {e}") from e

    if not isinstance(data, dict):
        raise ConfigError(f"configuration {path} is not a mapping")

    base = path.parent
    for field in PATH_FIELDS:
        value = _get(data, field)
        if value is not None and not Path(value).is_absolute():
            _set(data, field, str(base / value))

    for suffix, field in ENV_OVERRIDES.items():
        value = env.get(ENV_PREFIX + suffix)
        if value:
            LOG.debug("Configuration %s set from %s%s", ".".join(field), ENV_PREFIX, suffix)
            _set(data, field, value)

    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value

    config = validate_config(data)
    LOG.info("Loaded configuration %r from %s", config.name, path)
    return config
