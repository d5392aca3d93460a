import logging
from collections import Counter, defaultdict
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from sklearn import metrics

from theme_detection.errors import DataError
from theme_detection.misc import parallel_map
from theme_detection.model.cluster import NOISE, ClusterModel
from theme_detection.model.corpus import SentenceUnit
from theme_detection.model.evaluate import (
    ClusterExemplars,
    ConfusionMatrix,
    EvalReport,
    Exemplar,
    QuestionPrediction,
    TagDistribution,
    TagScore,
)
from theme_detection.model.vectors import VectorSet
from theme_detection.vectors import l2_normalize

LOG = logging.getLogger(__name__)

ABSTAIN = "<abstain>"
OTHER = "other"


class EmptyEvaluationError(DataError):
    pass


def tag_distributions(
    assignments: Mapping[str, int],
    tags: Mapping[str, Iterable[str]],
) -> list[TagDistribution]:
    """Per-cluster tag counts. Noise and clusters without members are left out."""

    counts: dict[int, Counter[str]] = defaultdict(Counter)
    for unit_id, cluster in assignments.items():
        if cluster == NOISE:
            continue
        counts[cluster].update(tags[unit_id])

    return [
        TagDistribution(cluster=cluster, counts=dict(counts[cluster])) for cluster in sorted(counts)
    ]


def tag_priors(units: Iterable[SentenceUnit]) -> dict[str, Fraction]:
    """Share of (sentence, tag) pairs per tag in the training units."""

    counts = Counter(tag for unit in units for tag in unit.tags)
    total = sum(counts.values())
    return {tag: Fraction(count, total) for tag, count in counts.items()}


class CentroidIndex:
    """Cosine nearest-centroid lookup. Centroids are normalized once."""

    def __init__(self, centroids: np.ndarray) -> None:
        self.centroids, _ = l2_normalize(np.asarray(centroids, dtype=np.float64))

    def __len__(self) -> int:
        return int(self.centroids.shape[0])

    def nearest(self, vector: np.ndarray | sp.spmatrix) -> tuple[int, float] | None:
        """Closest cluster and its cosine distance, or None for a zero vector (skip)."""

        if not len(self):
            return None

        v = vector.toarray() if sp.issparse(vector) else np.asarray(vector, dtype=np.float64)
        v = v.ravel()
        norm = float(np.linalg.norm(v))
        if norm == 0:
            return None

        dots = self.centroids @ v
        index = int(np.argmax(dots))
        return index, float(1.0 - dots[index] / norm)


def nearest_cluster(vector: np.ndarray, centroids: np.ndarray) -> tuple[int, float] | None:
    """argmin over 1 - cos(v, c), lower index on ties; None for a zero vector."""

    return CentroidIndex(centroids).nearest(vector)


def predict_question(
    question_id: str,
    vectors: Iterable[np.ndarray | sp.spmatrix],
    index: CentroidIndex,
    distributions: Mapping[int, TagDistribution],
    priors: Mapping[str, Fraction] | None = None,
) -> QuestionPrediction:
    """Average the tag distributions of every sentence's nearest cluster and take the argmax.

    Scores divide by the number of scored sentences. Ties go to the lexicographically smaller
    tag. With `priors`, each averaged score is divided by the tag's training prior first.
    A question without any scored sentence abstains.
    """

    clusters: list[int] = []
    skipped = 0
    for vector in vectors:
        hit = index.nearest(vector)
        if hit is None:
            skipped += 1
        else:
            clusters.append(hit[0])

    if not clusters:
        return QuestionPrediction(question_id=question_id, skipped=skipped)

    totals: dict[str, Fraction] = defaultdict(Fraction)
    for cluster in clusters:
        distribution = distributions.get(cluster)
        if distribution is None:
            continue
        for tag, p in distribution.probabilities.items():
            totals[tag] += p

    scores = {tag: total / len(clusters) for tag, total in totals.items()}
    if priors is not None:
        scores = {tag: score / priors[tag] for tag, score in scores.items() if priors.get(tag)}

    ranked = sorted(scores.items(), key=lambda item: (-item[1], item[0]))
    return QuestionPrediction(
        question_id=question_id,
        clusters=clusters,
        scores=dict(sorted(scores.items())),
        predicted_tag=ranked[0][0] if ranked else None,
        skipped=skipped,
    )


def _aligned(
    predictions: Sequence[QuestionPrediction], golds: Mapping[str, str]
) -> tuple[list[str], list[str]]:
    if not predictions:
        raise EmptyEvaluationError("no test questions to evaluate")

    y_true = [golds[p.question_id] for p in predictions]
    y_pred = [p.predicted_tag if p.predicted_tag is not None else ABSTAIN for p in predictions]
    return y_true, y_pred


def micro_f1(predictions: Sequence[QuestionPrediction], golds: Mapping[str, str]) -> float:
    """Micro-averaged F1; with single-label golds this is accuracy. Abstentions count as wrong."""

    y_true, y_pred = _aligned(predictions, golds)
    return float(metrics.f1_score(y_true, y_pred, average="micro"))


def per_tag_scores(
    predictions: Sequence[QuestionPrediction], golds: Mapping[str, str]
) -> tuple[list[TagScore], float]:
    """Precision, recall and F1 for every gold or predicted tag, and their macro-averaged F1."""

    y_true, y_pred = _aligned(predictions, golds)
    labels = sorted(set(y_true) | set(y_pred) - {ABSTAIN})

    precision, recall, f1, support = metrics.precision_recall_fscore_support(
        y_true, y_pred, labels=labels, zero_division=0
    )
    scores = [
        TagScore(tag=tag, precision=float(p), recall=float(r), f1=float(f), support=int(s))
        for tag, p, r, f, s in zip(labels, precision, recall, f1, support, strict=True)
    ]
    macro = float(np.mean(f1)) if len(labels) else 0.0
    return scores, macro


def confusion_matrix(
    predictions: Sequence[QuestionPrediction],
    golds: Mapping[str, str],
    top_m: int = 5,
) -> ConfusionMatrix:
    """Counts for the `top_m` most frequent gold tags; predictions outside them land in 'other'."""

    if top_m < 1:
        raise ValueError("top_m must be >= 1")

    y_true, y_pred = _aligned(predictions, golds)
    frequency = Counter(y_true)
    top = sorted(frequency, key=lambda tag: (-frequency[tag], tag))[:top_m]
    members = set(top)

    rows = [
        (t, p if p in members else OTHER)
        for t, p in zip(y_true, y_pred, strict=True)
        if t in members
    ]
    columns = top + [OTHER]
    matrix = metrics.confusion_matrix(
        [t for t, _ in rows],
        [p for _, p in rows],
        labels=columns,
    )

    return ConfusionMatrix(labels=top, columns=columns, matrix=matrix[: len(top)].tolist())


def _row(vectors: VectorSet, index: int) -> np.ndarray:
    row = vectors.vectors[index]
    return row.toarray().ravel() if sp.issparse(row) else np.asarray(row, dtype=np.float64)


def cluster_exemplars(
    model: ClusterModel,
    vectors: VectorSet,
    sentences: Mapping[str, str],
    distributions: Sequence[TagDistribution],
    top_n: int = 3,
) -> list[ClusterExemplars]:
    """Per cluster, the `top_n` members nearest the centroid by cosine distance (ties by id)."""

    if top_n < 1:
        raise ValueError("top_n must be >= 1")

    index = CentroidIndex(model.centroids)
    by_cluster = {d.cluster: d for d in distributions}
    members: dict[int, list[tuple[float, str]]] = defaultdict(list)

    for row, unit_id in enumerate(vectors.ids):
        cluster = model.assignments.get(unit_id, NOISE)
        if cluster == NOISE:
            continue

        v = _row(vectors, row)
        norm = float(np.linalg.norm(v))
        if norm == 0:
            continue
        members[cluster].append((float(1.0 - index.centroids[cluster] @ v / norm), unit_id))

    result = []
    for cluster in range(model.n_clusters):
        ranked = sorted(members.get(cluster, []))
        distribution = by_cluster.get(cluster)
        result.append(
            ClusterExemplars(
                cluster=cluster,
                size=len(ranked),
                tags=distribution.top_tags(3) if distribution else [],
                purity=distribution.purity if distribution else Fraction(0),
                exemplars=[
                    Exemplar(
                        rank=rank,
                        sentence_id=unit_id,
                        text=sentences.get(unit_id, ""),
                        distance=distance,
                    )
                    for rank, (distance, unit_id) in enumerate(ranked[:top_n], start=1)
                ],
            )
        )
    return result


def evaluate_model(
    model: ClusterModel,
    train_units: Sequence[SentenceUnit],
    test_units: Sequence[SentenceUnit],
    test_vectors: VectorSet,
    golds: Mapping[str, str],
    top_m: int = 5,
    normalize_by_prior: bool = False,
    workers: int = 1,
) -> EvalReport:
    """Score every test question with the fitted clusters.

    Every gold question is evaluated; one without a vectorized sentence abstains.
    """

    if not golds:
        raise EmptyEvaluationError("no test questions to evaluate")

    train_tags = {u.sentence_id: u.tags for u in train_units}
    distributions = tag_distributions(model.assignments, train_tags)
    by_cluster = {d.cluster: d for d in distributions}
    priors = tag_priors(train_units) if normalize_by_prior else None
    index = CentroidIndex(model.centroids)

    rows = {unit_id: row for row, unit_id in enumerate(test_vectors.ids)}
    sentences: dict[str, list[int]] = defaultdict(list)
    for unit in test_units:
        if unit.sentence_id in rows:
            sentences[unit.question_id].append(rows[unit.sentence_id])

    def predict(question_id: str) -> QuestionPrediction:
        vectors = (_row(test_vectors, row) for row in sentences.get(question_id, []))
        return predict_question(question_id, vectors, index, by_cluster, priors)

    predictions = parallel_map(predict, sorted(golds), workers)
    abstained = sum(1 for p in predictions if p.abstained)
    if abstained:
        LOG.warning("%d of %d test questions abstained", abstained, len(predictions))

    per_tag, macro = per_tag_scores(predictions, golds)
    report = EvalReport(
        micro_f1=micro_f1(predictions, golds),
        macro_f1=macro,
        questions=len(predictions),
        abstained=abstained,
        per_tag=per_tag,
        confusion=confusion_matrix(predictions, golds, top_m),
        predictions=predictions,
    )

    LOG.info(
        "Micro-F1 %.4f over %d questions (%d abstained)",
        report.micro_f1,
        report.questions,
        abstained,
    )
    return report
