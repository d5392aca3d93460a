import asyncio
import json
import logging
import time
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import pandas as pd

from theme_detection.cluster import elbow_select, hdbscan_fit, kmeans_fit
from theme_detection.cluster.artifact import dump_model, parse_model, summarize
from theme_detection.config import EncoderKind, Representation, RunConfig
from theme_detection.corpus import (
    cap_units,
    corpus_stats,
    cut_datasets,
    dump_split_manifest,
    dump_units,
    filter_by_date,
    load_corpus,
    parse_units,
    segment_corpus,
    select_tags,
    split_train_test,
)
from theme_detection.encoder import EncoderClient
from theme_detection.errors import ConfigError, DataError, StageError
from theme_detection.evaluate import cluster_exemplars, evaluate_model, tag_distributions
from theme_detection.hashing import digest_file, digest_parts
from theme_detection.lemmatize import Lemmatizer
from theme_detection.misc import dumps_stable
from theme_detection.model.cluster import ClusterAlgorithm
from theme_detection.model.corpus import SentenceUnit
from theme_detection.model.evaluate import EvalReport
from theme_detection.model.model import BaseModel
from theme_detection.model.run import RunManifest
from theme_detection.model.vectors import VectorSet
from theme_detection.report import REPORT_JSON, render_reports
from theme_detection.represent import build_srl_units, load_coref, load_srl, resolve_units
from theme_detection.segment import Segmenter
from theme_detection.storage import (
    ArtifactStorage,
    CacheEntry,
    DictArtifactStorage,
    FileArtifactStorage,
    Stage,
)
from theme_detection.tfidf import encode_tfidf, fit_tfidf
from theme_detection.vectors import (
    align,
    dump_vectors,
    load_embeddings,
    normalize_set,
    parse_vectors,
)

LOG = logging.getLogger(__name__)

STAGES = list(Stage)
MANIFEST_NAME = "manifest.json"
COMPARISON_CSV = "comparison.csv"
COMPARISON_TEXT = "comparison.txt"

Payloads = dict[str, bytes]
Compute = Callable[[], tuple[Payloads, dict[str, Any]]]


class SplitMismatchError(DataError):
    pass


class ComparisonError(DataError):
    pass


class StageResult(BaseModel):
    stage: Stage
    key: str
    entry: CacheEntry
    payloads: Payloads
    cached: bool = False
    seconds: float = 0.0

    @property
    def digest(self) -> str:
        return self.entry.digest

    @property
    def meta(self) -> dict[str, Any]:
        return self.entry.meta

    def text(self, name: str) -> str:
        return self.payloads[name].decode("utf-8")

    def units(self, name: str) -> list[SentenceUnit]:
        return parse_units(self.text(name))

    def vectors(self, name: str) -> VectorSet:
        return parse_vectors(self.payloads[name])


def _encode(text: str) -> bytes:
    return text.encode("utf-8")


def _input_digest(path: Path | None) -> str:
    if path is None:
        return "-"
    try:
        return digest_file(path)
    except FileNotFoundError as e:
        raise DataError(f"input file not found: {path}") from e


class ThemePipeline:
    """Staged theme detection run: ingest, represent, encode, cluster, evaluate.

    Every stage result is cached under a key derived from the stage name, the digests of the
    stages it reads, its own settings and the digests of its input files.
    """

    def __init__(
        self,
        config: RunConfig,
        storage: ArtifactStorage | None = None,
        client: EncoderClient | None = None,
    ) -> None:
        """Init pipeline.

        :param config: Validated run configuration.
        :param storage: Stage cache. Defaults to `config.cache_dir`, or memory when unset.
        :param client: Encoder client for the `encoder-endpoint` encoder.
        """

        self.config = config
        if storage is None:
            storage = (
                FileArtifactStorage(config.cache_dir)
                if config.cache_dir is not None
                else DictArtifactStorage()
            )
        self.storage = storage
        self.client = client
        self.results: dict[Stage, StageResult] = {}

    def stage_key(
        self,
        stage: Stage,
        settings: dict[str, Any],
        upstream: Sequence[StageResult] = (),
        files: Sequence[Path | None] = (),
    ) -> str:
        return digest_parts(
            [
                stage.value,
                *(result.digest for result in upstream),
                dumps_stable(settings, indent=None),
                *(_input_digest(path) for path in files),
            ]
        )

    def run_stage(
        self,
        stage: Stage,
        settings: dict[str, Any],
        upstream: Sequence[StageResult],
        files: Sequence[Path | None],
        compute: Compute,
    ) -> StageResult:
        started = time.perf_counter()
        try:
            key = self.stage_key(stage, settings, upstream, files)
            loaded = self.storage.load(stage, key)
            if loaded is not None:
                entry, payloads = loaded
                LOG.info("Stage %s served from cache", stage.value)
            else:
                LOG.info("Stage %s started", stage.value)
                payloads, meta = compute()
                entry = self.storage.store(stage, key, payloads, meta)
        except StageError:
            raise
        except Exception as e:
            raise StageError(stage.value, e) from e

        result = StageResult(
            stage=stage,
            key=key,
            entry=entry,
            payloads=payloads,
            cached=loaded is not None,
            seconds=time.perf_counter() - started,
        )
        LOG.info("Stage %s finished in %.2fs", stage.value, result.seconds)
        self.results[stage] = result
        return result

    def ingest(self) -> StageResult:
        config = self.config
        settings = {
            "format": config.corpus.format.value,
            "created_after": config.corpus.created_after,
            "created_before": config.corpus.created_before,
            "min_support": config.tags.min_support,
            "ratio": config.split.ratio,
            "seed": config.split_seed,
        }
        settings = json.loads(json.dumps(settings, default=str))

        def compute() -> tuple[Payloads, dict[str, Any]]:
            questions = load_corpus(config.corpus.path, config.corpus.format)
            if config.corpus.created_after or config.corpus.created_before:
                questions = filter_by_date(
                    questions, config.corpus.created_after, config.corpus.created_before
                )
                LOG.info("%d questions inside the date window", len(questions))

            allowlist = None
            if config.tags.allowlist_path is not None:
                lines = config.tags.allowlist_path.read_text(encoding="utf-8").splitlines()
                allowlist = [line.strip() for line in lines if line.strip()]

            tagset = select_tags(questions, config.tags.min_support, allowlist)
            split = split_train_test(questions, tagset, config.split.ratio, config.split_seed)

            segmenter = Segmenter()
            train = segment_corpus(split.train, segmenter, config.workers)
            test = segment_corpus(split.test, segmenter, config.workers)
            datasets = cut_datasets(train)
            stats = corpus_stats(len(questions), tagset, split, datasets, segmenter)

            payloads = {
                "tagset.json": _encode(dumps_stable(tagset.model_dump(mode="json"))),
                "split.jsonl": _encode(dump_split_manifest(split)),
                "golds.json": _encode(dumps_stable(split.golds())),
                "train_units.jsonl": _encode(dump_units(train)),
                "test_units.jsonl": _encode(dump_units(test)),
                "stats.json": _encode(dumps_stable(stats.model_dump(mode="json"))),
            }
            meta = {
                "questions": len(questions),
                "tags": len(tagset.tags),
                "train": len(split.train),
                "test": len(split.test),
            }
            return payloads, meta

        return self.run_stage(
            Stage.INGEST,
            settings,
            [],
            [config.corpus.path, config.tags.allowlist_path],
            compute,
        )

    def represent(self, ingest: StageResult) -> StageResult:
        config = self.config.represent
        coref_path = config.coref_path if config.resolve_pronouns else None
        srl_path = config.srl_path if config.representation == Representation.SRL else None
        settings = {"max_n": config.max_n, "representation": config.representation.value}

        def compute() -> tuple[Payloads, dict[str, Any]]:
            coref = load_coref(coref_path) if coref_path is not None else {}
            lemmatizer = None
            parses = {}
            if srl_path is not None:
                parses = load_srl(srl_path)
                lemmatizer = (
                    Lemmatizer.from_tsv(config.lexicon_path)
                    if config.lexicon_path is not None
                    else Lemmatizer.default()
                )

            payloads: Payloads = {}
            meta: dict[str, Any] = {}
            discards = []
            for split in ("train", "test"):
                units = ingest.units(f"{split}_units.jsonl")
                if lemmatizer is not None:
                    units, dropped = build_srl_units(
                        cap_units(units, config.max_n), parses, lemmatizer, coref
                    )
                    discards.extend(dropped)
                else:
                    # Chains index whole questions, so resolve before capping.
                    if coref:
                        units = resolve_units(units, coref)
                    units = cap_units(units, config.max_n)

                payloads[f"{split}_units.jsonl"] = _encode(dump_units(units))
                meta[f"{split}_units"] = len(units)

            payloads["discards.jsonl"] = _encode(
                "".join(discard.model_dump_json() + "\n" for discard in discards)
            )
            meta["discards"] = len(discards)
            return payloads, meta

        files = [coref_path]
        if srl_path is not None:
            files += [srl_path, config.lexicon_path]
        return self.run_stage(Stage.REPRESENT, settings, [ingest], files, compute)

    def _embed_remote(self, texts: list[str]) -> np.ndarray:
        config = self.config.encoder
        if self.client is not None:
            return asyncio.run(self.client.embed(texts))
        if not config.endpoint:
            raise ConfigError("encoder.endpoint is not set")

        client = EncoderClient(
            config.endpoint,
            batch_size=config.batch_size,
            timeout=config.timeout,
            max_in_flight=config.max_in_flight,
            retries=config.retries,
            backoff=config.backoff,
        )
        return asyncio.run(client.embed(texts))

    def encode(self, represent: StageResult) -> StageResult:
        config = self.config.encoder
        settings: dict[str, Any] = {"kind": config.kind.value}
        files: list[Path | None] = []
        if config.kind == EncoderKind.TFIDF:
            settings["tfidf"] = config.tfidf.model_dump(mode="json")
        elif config.kind == EncoderKind.EMBEDDING_FILE:
            files.append(config.embeddings_path)
        else:
            settings["endpoint"] = config.endpoint

        def compute() -> tuple[Payloads, dict[str, Any]]:
            train = represent.units("train_units.jsonl")
            test = represent.units("test_units.jsonl")
            train_ids, test_ids = [u.sentence_id for u in train], [u.sentence_id for u in test]
            payloads: Payloads = {}

            if config.kind == EncoderKind.TFIDF:
                model = fit_tfidf([u.text for u in train], config.tfidf)
                train_set = encode_tfidf(model, train_ids, [u.text for u in train])
                test_set = encode_tfidf(model, test_ids, [u.text for u in test])
                payloads["tfidf.json"] = _encode(dumps_stable(model.model_dump(mode="json")))
            elif config.kind == EncoderKind.EMBEDDING_FILE:
                if config.embeddings_path is None:
                    raise ConfigError("encoder.embeddings_path is not set")
                store = load_embeddings(config.embeddings_path)
                train_set, _ = normalize_set(align(store, train_ids))
                test_set, _ = normalize_set(align(store, test_ids))
            else:
                matrix = self._embed_remote([u.text for u in train] + [u.text for u in test])
                split_at = len(train)
                train_set, _ = normalize_set(VectorSet(ids=train_ids, vectors=matrix[:split_at]))
                test_set, _ = normalize_set(VectorSet(ids=test_ids, vectors=matrix[split_at:]))

            payloads["train.vec"] = dump_vectors(train_set)
            payloads["test.vec"] = dump_vectors(test_set)
            meta = {
                "encoder": config.label,
                "dim": train_set.dim,
                "train_zero": int((~train_set.nonzero_mask()).sum()),
                "test_zero": int((~test_set.nonzero_mask()).sum()),
            }
            return payloads, meta

        return self.run_stage(Stage.ENCODE, settings, [represent], files, compute)

    def cluster(self, encode: StageResult) -> StageResult:
        config = self.config.cluster
        seed = self.config.seed
        settings = {"cluster": config.model_dump(mode="json"), "seed": seed}

        def compute() -> tuple[Payloads, dict[str, Any]]:
            vectors = encode.vectors("train.vec")
            mask = vectors.nonzero_mask()
            if not mask.all():
                LOG.warning("Excluding %d zero vectors from clustering", int((~mask).sum()))
                vectors = vectors.select(mask)

            payloads: Payloads = {}
            if config.algorithm == ClusterAlgorithm.KMEANS:
                k = config.k
                if k is None:
                    if config.elbow is None:
                        raise ConfigError("kmeans requires cluster.k or cluster.elbow")
                    elbow = elbow_select(
                        vectors,
                        config.elbow.k_start,
                        config.elbow.k_step,
                        config.elbow.k_max,
                        trials=config.elbow.trials,
                        seed=seed,
                        max_iter=config.max_iter,
                        tol=config.tol,
                        workers=self.config.workers,
                    )
                    payloads["elbow.json"] = _encode(dumps_stable(elbow.model_dump(mode="json")))
                    k = elbow.chosen_k
                model = kmeans_fit(vectors, k, seed, config.max_iter, config.tol, config.n_init)
            else:
                model = hdbscan_fit(
                    vectors,
                    config.min_cluster_size,
                    config.min_samples,
                    config.allow_single_cluster,
                )

            payloads["model.clm"] = dump_model(model)
            payloads["model.json"] = _encode(dumps_stable(summarize(model)))
            return payloads, {"k": model.n_clusters, "noise": model.noise_count}

        return self.run_stage(Stage.CLUSTER, settings, [encode], [], compute)

    def evaluate(
        self,
        ingest: StageResult,
        represent: StageResult,
        encode: StageResult,
        cluster: StageResult,
    ) -> StageResult:
        config = self.config.evaluate
        settings = config.model_dump(mode="json")

        def compute() -> tuple[Payloads, dict[str, Any]]:
            model = parse_model(cluster.payloads["model.clm"])
            train = represent.units("train_units.jsonl")
            test = represent.units("test_units.jsonl")
            golds = json.loads(ingest.text("golds.json"))

            report = evaluate_model(
                model,
                train,
                test,
                encode.vectors("test.vec"),
                golds,
                top_m=config.top_m,
                normalize_by_prior=config.normalize_by_prior,
                workers=self.config.workers,
            )
            distributions = tag_distributions(
                model.assignments, {u.sentence_id: u.tags for u in train}
            )
            exemplars = cluster_exemplars(
                model,
                encode.vectors("train.vec"),
                {u.sentence_id: u.text for u in train},
                distributions,
                config.top_n,
            )

            rendered = render_reports(report, exemplars)
            payloads = {name: _encode(content) for name, content in rendered.items()}
            return payloads, {"micro_f1": report.micro_f1, "macro_f1": report.macro_f1}

        return self.run_stage(
            Stage.EVALUATE, settings, [ingest, represent, encode, cluster], [], compute
        )

    def run(self, until: Stage = Stage.EVALUATE) -> tuple[RunManifest, EvalReport | None]:
        """Run stages up to and including `until`, then write outputs and the manifest."""

        last = STAGES.index(until)
        ingest = self.ingest()
        if last >= STAGES.index(Stage.REPRESENT):
            represent = self.represent(ingest)
        if last >= STAGES.index(Stage.ENCODE):
            encode = self.encode(represent)
        if last >= STAGES.index(Stage.CLUSTER):
            cluster = self.cluster(encode)
        report = None
        if last >= STAGES.index(Stage.EVALUATE):
            evaluated = self.evaluate(ingest, represent, encode, cluster)
            report = EvalReport.model_validate_json(evaluated.payloads[REPORT_JSON])

        manifest = self.write_outputs()
        return manifest, report

    def manifest(self) -> RunManifest:
        config = self.config
        manifest = RunManifest(
            name=config.name,
            config=config.model_dump(mode="json"),
            seeds={"split": config.split_seed, "cluster": config.seed},
            encoder=config.encoder.label,
            clusterer=config.cluster.algorithm.value,
            representation=config.represent.representation.value,
            max_n=config.represent.max_n,
        )

        for stage, result in self.results.items():
            manifest.stage_keys[stage.value] = result.key
            manifest.timings[stage.value] = round(result.seconds, 6)
            if result.cached:
                manifest.cached.append(stage.value)
            for name, digest in result.entry.digests.items():
                manifest.artifact_hashes[f"{stage.value}/{name}"] = digest
                manifest.outputs[f"{stage.value}.{name}"] = f"{stage.value}/{name}"

        if Stage.INGEST in self.results:
            manifest.split_digest = self.results[Stage.INGEST].entry.digests["split.jsonl"]
        if Stage.CLUSTER in self.results:
            manifest.k = self.results[Stage.CLUSTER].meta.get("k")
        if Stage.EVALUATE in self.results:
            manifest.micro_f1 = self.results[Stage.EVALUATE].meta.get("micro_f1")
            manifest.macro_f1 = self.results[Stage.EVALUATE].meta.get("macro_f1")
        return manifest

    def write_outputs(self) -> RunManifest:
        run_dir = self.config.run_dir
        for stage, result in self.results.items():
            directory = run_dir / stage.value
            directory.mkdir(parents=True, exist_ok=True)
            for name, data in result.payloads.items():
                (directory / name).write_bytes(data)

        manifest = self.manifest()
        write_manifest(manifest, run_dir / MANIFEST_NAME)
        LOG.info("Run %s written to %s", manifest.name, run_dir)
        return manifest


def write_manifest(manifest: RunManifest, path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_stable(manifest.model_dump(mode="json")), encoding="utf-8", newline="\n")


def load_manifest(path: Path | str) -> RunManifest:
    try:
        return RunManifest.model_validate_json(Path(path).read_bytes())
    except FileNotFoundError as e:
        raise DataError(f"manifest not found: {path}") from e
    except ValueError as e:
        raise DataError(f"invalid manifest {path}: {e}") from e


def run_pipeline(
    config: RunConfig,
    storage: ArtifactStorage | None = None,
    until: Stage = Stage.EVALUATE,
    client: EncoderClient | None = None,
) -> tuple[RunManifest, EvalReport | None]:
    return ThemePipeline(config, storage, client).run(until)


class Comparison:
    """Micro-F1 across runs over one split, sorted best first, with a dataset pivot."""

    COLUMNS = ["name", "encoder", "clusterer", "representation", "max_n", "k", "micro_f1"]

    def __init__(self, rows: pd.DataFrame) -> None:
        self.rows = rows

    @property
    def pivot(self) -> pd.DataFrame:
        columns = ["clusterer", "encoder"]
        if self.rows["representation"].nunique() > 1:
            columns.insert(0, "representation")
        return self.rows.pivot_table(
            index="max_n", columns=columns, values="micro_f1", aggfunc="max"
        )

    def to_csv(self) -> str:
        return self.rows.to_csv(index=False, lineterminator="\n", float_format="%.4f")

    def to_text(self) -> str:
        formatter = "{:.4f}".format
        return (
            self.rows.to_string(index=False, float_format=formatter)
            + "\n\n"
            + self.pivot.to_string(float_format=formatter)
            + "\n"
        )

    def write(self, directory: Path) -> dict[str, Path]:
        directory.mkdir(parents=True, exist_ok=True)
        paths = {}
        for name, text in ((COMPARISON_CSV, self.to_csv()), (COMPARISON_TEXT, self.to_text())):
            paths[name] = directory / name
            paths[name].write_text(text, encoding="utf-8", newline="\n")
        return paths


def compare_runs(manifests: Sequence[RunManifest]) -> Comparison:
    """Micro-F1 table over complete runs that share a split.

    :raises ComparisonError: Fewer than two runs, or a run without evaluation.
    :raises SplitMismatchError: Runs were split differently, so scores are not comparable.
    """

    if len(manifests) < 2:
        raise ComparisonError("comparison needs at least two runs")

    incomplete = [m.name for m in manifests if not m.complete]
    if incomplete:
        raise ComparisonError(f"runs without evaluation: {', '.join(incomplete)}")

    splits = {m.split_digest for m in manifests}
    if len(splits) > 1:
        raise SplitMismatchError(f"runs use {len(splits)} different splits")

    rows = pd.DataFrame(
        [[getattr(m, column) for column in Comparison.COLUMNS] for m in manifests],
        columns=Comparison.COLUMNS,
    )
    rows = rows.sort_values(["micro_f1", "name"], ascending=[False, True], kind="stable")
    return Comparison(rows.reset_index(drop=True))


def run_grid(
    config: RunConfig,
    storage: ArtifactStorage | None = None,
    client: EncoderClient | None = None,
) -> tuple[list[RunManifest], Comparison | None]:
    """Run every grid cell with a shared stage cache and compare the results."""

    cells = config.cells()
    if storage is None and config.cache_dir is None:
        storage = DictArtifactStorage()

    manifests = []
    for cell in cells:
        LOG.info("Grid cell %s", cell.name)
        manifest, _ = run_pipeline(cell, storage, client=client)
        manifests.append(manifest)

    if len(manifests) < 2:
        return manifests, None

    comparison = compare_runs(manifests)
    comparison.write(config.run_dir)
    LOG.info("Compared %d runs, best %s", len(manifests), comparison.rows.loc[0, "name"])
    return manifests, comparison