import logging
import math
import re
from collections import Counter
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from theme_detection.errors import DataError
from theme_detection.model.vectors import TfidfConfig, TfidfModel, VectorSet
from theme_detection.vectors import l2_normalize

LOG = logging.getLogger(__name__)

TOKEN_RE = re.compile(r"\w+")


class EmptyVocabularyError(DataError):
    pass


def ngrams(text: str, config: TfidfConfig) -> list[str]:
    """Word ngrams of `text` within the configured length range, in order of occurrence."""

    if config.lowercase:
        text = text.lower()

    tokens = TOKEN_RE.findall(text)
    low, high = config.ngram_range

    result = []
    for n in range(low, high + 1):
        result.extend(" ".join(tokens[i : i + n]) for i in range(len(tokens) - n + 1))
    return result


def fit_tfidf(texts: Sequence[str], config: TfidfConfig | None = None) -> TfidfModel:
    """Fit vocabulary and smoothed idf, ln((1 + N) / (1 + df)) + 1.

    :raises EmptyVocabularyError: No ngram reaches `min_df`.
    """

    config = config or TfidfConfig()
    if not texts:
        raise EmptyVocabularyError("cannot fit TF-IDF on zero texts")

    df: Counter[str] = Counter()
    for text in texts:
        df.update(set(ngrams(text, config)))

    terms = sorted(term for term, count in df.items() if count >= config.min_df)
    if not terms:
        raise EmptyVocabularyError(f"no ngram reaches min_df={config.min_df}")

    n = len(texts)
    idf = np.array([math.log((1 + n) / (1 + df[term])) + 1 for term in terms], dtype=np.float64)

    LOG.info("Fitted TF-IDF on %d texts: %d ngrams", n, len(terms))
    return TfidfModel(
        vocabulary={term: index for index, term in enumerate(terms)},
        idf=idf,
        config=config,
        n_documents=n,
    )


def transform_many(model: TfidfModel, texts: Sequence[str]) -> sp.csr_matrix:
    """L2-normalized tf * idf rows. Out-of-vocabulary ngrams are ignored."""

    indptr = [0]
    indices: list[int] = []
    data: list[float] = []

    for text in texts:
        counts = Counter(
            model.vocabulary[gram]
            for gram in ngrams(text, model.config)
            if gram in model.vocabulary
        )
        for column in sorted(counts):
            indices.append(column)
            data.append(counts[column] * model.idf[column])
        indptr.append(len(indices))

    matrix = sp.csr_matrix(
        (
            np.asarray(data, dtype=np.float64),
            np.asarray(indices, dtype=np.int64),
            np.asarray(indptr, dtype=np.int64),
        ),
        shape=(len(texts), model.dim),
    )
    matrix, zeros = l2_normalize(matrix)
    if zeros:
        LOG.warning("%d of %d texts have no in-vocabulary ngram", zeros, len(texts))
    return matrix


def transform_tfidf(model: TfidfModel, text: str) -> sp.csr_matrix:
    """Single text as a 1 x |V| row."""

    return transform_many(model, [text])


def encode_tfidf(model: TfidfModel, ids: Sequence[str], texts: Sequence[str]) -> VectorSet:
    return VectorSet(ids=list(ids), vectors=transform_many(model, texts), normalized=True)
