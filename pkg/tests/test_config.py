from pathlib import Path

import pytest
import yaml

from theme_detection.config import (
    EncoderKind,
    Representation,
    load_config,
    validate_config,
)
from theme_detection.errors import ConfigError
from theme_detection.model.cluster import ClusterAlgorithm

MINIMAL = {"corpus": {"path": "questions.jsonl"}, "cluster": {"k": 10}}


def write_config(tmp_path: Path, data) -> Path:
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    return path


class TestLoadConfig:
    def test_defaults(self, tmp_path):
        config = load_config(write_config(tmp_path, MINIMAL), env={})
        assert config.name == "run"
        assert config.represent.max_n == 5
        assert config.represent.representation == Representation.SENTENCE
        assert config.encoder.kind == EncoderKind.TFIDF
        assert config.cluster.algorithm == ClusterAlgorithm.KMEANS
        assert config.tags.min_support == 50
        assert config.split.ratio == 0.8
        assert config.evaluate.top_m == 5 and config.evaluate.top_n == 3

    def test_relative_paths_resolve_against_file(self, tmp_path):
        config = load_config(write_config(tmp_path, {**MINIMAL, "out_dir": "results"}), env={})
        assert config.corpus.path == tmp_path / "questions.jsonl"
        assert config.out_dir == tmp_path / "results"

    def test_absolute_paths_kept(self, tmp_path):
        data = {**MINIMAL, "corpus": {"path": "/data/questions.jsonl"}}
        config = load_config(write_config(tmp_path, data), env={})
        assert config.corpus.path == Path("/data/questions.jsonl")

    def test_environment_overrides(self, tmp_path):
        env = {
            "THEME_DETECTION_CORPUS_PATH": "/env/corpus.jsonl",
            "THEME_DETECTION_ENCODER_ENDPOINT": "http://encoder:8080/embed",
            "THEME_DETECTION_CACHE_DIR": "",
        }
        data = {**MINIMAL, "encoder": {"kind": "encoder-endpoint"}}
        config = load_config(write_config(tmp_path, data), env=env)
        assert config.corpus.path == Path("/env/corpus.jsonl")
        assert config.encoder.endpoint == "http://encoder:8080/embed"
        assert config.cache_dir is None

    def test_overrides(self, tmp_path):
        overrides = {"seed": 42, "workers": 3, "out_dir": tmp_path / "elsewhere", "name": None}
        config = load_config(write_config(tmp_path, MINIMAL), env={}, overrides=overrides)
        assert config.seed == 42 and config.split_seed == 42
        assert config.workers == 3
        assert config.run_dir == tmp_path / "elsewhere" / "run"

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "absent.yaml", env={})

    def test_invalid_yaml(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("corpus: [unclosed", encoding="utf-8")
        with pytest.raises(ConfigError, match="invalid YAML"):
            load_config(path, env={})

    def test_not_a_mapping(self, tmp_path):
        with pytest.raises(ConfigError, match="not a mapping"):
            load_config(write_config(tmp_path, ["a", "b"]), env={})

    def test_empty_file(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("", encoding="utf-8")
        with pytest.raises(ConfigError, match="corpus"):
            load_config(path, env={})


class TestValidateConfig:
    @pytest.mark.parametrize(
        "update, message",
        [
            ({"represent": {"representation": "srl"}}, "srl_path"),
            ({"encoder": {"kind": "embedding-file"}}, "embeddings_path"),
            ({"encoder": {"kind": "encoder-endpoint"}}, "endpoint"),
            ({"cluster": {}}, "cluster.k or cluster.elbow"),
            ({"represent": {"max_n": 6}}, "max_n"),
            ({"split": {"ratio": 1.0}}, "ratio"),
            ({"cluster": {"algorithm": "dbscan"}}, "algorithm"),
        ],
    )
    def test_rejects(self, update, message):
        with pytest.raises(ConfigError, match=message):
            validate_config({**MINIMAL, **update})

    def test_hdbscan_needs_no_k(self):
        config = validate_config({**MINIMAL, "cluster": {"algorithm": "hdbscan"}})
        assert config.cluster.min_cluster_size == 5 and config.cluster.min_samples == 3

    def test_elbow_instead_of_k(self):
        elbow = {"k_start": 10, "k_step": 10, "k_max": 50}
        config = validate_config({**MINIMAL, "cluster": {"elbow": elbow}})
        assert config.cluster.k is None
        assert config.cluster.elbow.trials == 5

    def test_split_seed(self):
        config = validate_config({**MINIMAL, "seed": 3, "split": {"seed": 9}})
        assert config.split_seed == 9

    def test_encoder_label(self):
        assert validate_config(MINIMAL).encoder.label == "tfidf"
        config = validate_config({**MINIMAL, "encoder": {"name": "use-v4", "kind": "tfidf"}})
        assert config.encoder.label == "use-v4"


class TestCells:
    def test_without_grid(self):
        config = validate_config(MINIMAL)
        assert config.cells() == [config]

    def test_grid(self):
        data = {
            **MINIMAL,
            "name": "sweep",
            "grid": {"max_n": [1, 3], "clusterer": ["kmeans", "hdbscan"]},
        }
        cells = validate_config(data).cells()
        assert [c.name for c in cells] == [
            "sweep-n1-kmeans-tfidf-sentence",
            "sweep-n1-hdbscan-tfidf-sentence",
            "sweep-n3-kmeans-tfidf-sentence",
            "sweep-n3-hdbscan-tfidf-sentence",
        ]
        assert [c.represent.max_n for c in cells] == [1, 1, 3, 3]
        assert all(c.grid is None for c in cells)
        assert cells[1].cluster.algorithm == ClusterAlgorithm.HDBSCAN
