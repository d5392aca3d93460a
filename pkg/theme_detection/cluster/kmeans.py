import logging
from typing import Iterator

import numpy as np
import scipy.sparse as sp

from theme_detection.errors import DataError
from theme_detection.model.cluster import KMeansModel
from theme_detection.model.vectors import VectorSet

LOG = logging.getLogger(__name__)

Matrix = np.ndarray | sp.csr_matrix

# Above this k * dim, squared distances use the dot-product expansion instead of exact differences.
EXACT_DISTANCE_LIMIT = 4096
CHUNK_ELEMENTS = 1 << 22


class ClusterCountError(DataError):
    pass


def _chunks(n: int, width: int) -> Iterator[tuple[int, int]]:
    step = max(1, CHUNK_ELEMENTS // max(1, width))
    for start in range(0, n, step):
        yield start, min(start + step, n)


def _dense(rows: Matrix) -> np.ndarray:
    return rows.toarray() if sp.issparse(rows) else rows


def squared_distances(X: Matrix, centroids: np.ndarray) -> np.ndarray:
    """n x k squared Euclidean distances."""

    n, k = X.shape[0], centroids.shape[0]
    dim = centroids.shape[1]

    if sp.issparse(X) or k * dim > EXACT_DISTANCE_LIMIT:
        if sp.issparse(X):
            x_sq = np.asarray(X.multiply(X).sum(axis=1)).ravel()
            dots = np.asarray(X @ centroids.T)
        else:
            x_sq = np.einsum("ij,ij->i", X, X)
            dots = X @ centroids.T
        c_sq = np.einsum("ij,ij->i", centroids, centroids)
        return np.maximum(x_sq[:, None] - 2 * dots + c_sq[None, :], 0.0)

    result = np.empty((n, k), dtype=np.float64)
    for start, stop in _chunks(n, k * dim):
        diff = X[start:stop, None, :] - centroids[None, :, :]
        result[start:stop] = np.einsum("ijk,ijk->ij", diff, diff)
    return result


def distortion(X: Matrix, centroids: np.ndarray, labels: np.ndarray) -> float:
    """Sum of squared distances from every point to its assigned centroid, computed exactly."""

    labels = np.asarray(labels)
    total = 0.0
    for start, stop in _chunks(X.shape[0], X.shape[1]):
        diff = _dense(X[start:stop]) - centroids[labels[start:stop]]
        total += float(np.einsum("ij,ij->", diff, diff))
    return total


def count_distinct(X: Matrix) -> int:
    if sp.issparse(X):
        X = sp.csr_matrix(X)
        X.sum_duplicates()
        X.eliminate_zeros()
        X.sort_indices()
        rows = {
            (X.indices[a:b].tobytes(), X.data[a:b].tobytes())
            for a, b in zip(X.indptr[:-1], X.indptr[1:], strict=True)
        }
        return len(rows)
    return int(np.unique(X, axis=0).shape[0])


def _row(X: Matrix, index: int) -> np.ndarray:
    row = X[index]
    return (row.toarray() if sp.issparse(row) else row).reshape(1, -1).astype(np.float64)


def kmeans_plusplus(X: Matrix, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: each next center is drawn with probability proportional to D^2."""

    n = X.shape[0]
    centers = [_row(X, int(rng.integers(n)))]
    closest = squared_distances(X, centers[0])[:, 0]

    for _ in range(1, k):
        cumulative = np.cumsum(closest)
        total = cumulative[-1]
        if total <= 0:
            break
        index = int(np.searchsorted(cumulative, rng.random() * total, side="right"))
        index = min(index, int(np.flatnonzero(closest > 0)[-1]))
        centers.append(_row(X, index))
        closest = np.minimum(closest, squared_distances(X, centers[-1])[:, 0])

    return np.vstack(centers)


def _indicator(labels: np.ndarray, k: int) -> sp.csr_matrix:
    n = labels.shape[0]
    return sp.csr_matrix((np.ones(n), (labels, np.arange(n))), shape=(k, n))


def update_centroids(X: Matrix, labels: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Member means. Empty clusters are reseeded with the point farthest from its centroid.

    :return: Centroids and the (possibly reassigned) labels.
    """

    labels = labels.copy()
    counts = np.bincount(labels, minlength=k)
    sums = _indicator(labels, k) @ X
    sums = sums.toarray() if sp.issparse(sums) else np.asarray(sums)
    centroids = sums / np.maximum(counts, 1)[:, None]

    for cluster in np.flatnonzero(counts == 0):
        member_distances = np.empty(X.shape[0])
        for start, stop in _chunks(X.shape[0], X.shape[1]):
            diff = _dense(X[start:stop]) - centroids[labels[start:stop]]
            member_distances[start:stop] = np.einsum("ij,ij->i", diff, diff)

        member_distances[counts[labels] < 2] = -1.0
        point = int(np.argmax(member_distances))
        donor = labels[point]

        LOG.debug("Reseeding empty cluster %d with point %d from cluster %d", cluster, point, donor)
        labels[point] = cluster
        counts[donor] -= 1
        counts[cluster] = 1
        centroids[cluster] = _row(X, point)[0]

        members = labels == donor
        donor_rows = X[members]
        centroids[donor] = np.asarray(donor_rows.mean(axis=0)).ravel()

    return centroids, labels


def lloyd(
    X: Matrix,
    k: int,
    rng: np.random.Generator,
    max_iter: int = 300,
    tol: float = 1e-4,
) -> tuple[np.ndarray, np.ndarray, int, list[float]]:
    """One Lloyd run from k-means++ seeds.

    Stops when no label changes, the largest centroid shift falls below `tol`, or after
    `max_iter` updates. The returned centroids are the means of the returned labels.
    """

    centroids = kmeans_plusplus(X, k, rng)
    labels = np.argmin(squared_distances(X, centroids), axis=1)
    history = [distortion(X, centroids, labels)]

    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        updated, labels = update_centroids(X, labels, k)
        history.append(distortion(X, updated, labels))

        shift = float(np.sqrt(((updated - centroids) ** 2).sum(axis=1)).max())
        centroids = updated

        new_labels = np.argmin(squared_distances(X, centroids), axis=1)
        changed = bool((new_labels != labels).any())
        labels = new_labels
        history.append(distortion(X, centroids, labels))

        LOG.debug("Lloyd iteration %d: distortion %.6f, shift %.3g", n_iter, history[-1], shift)
        if not changed or shift < tol:
            break

    centroids, labels = update_centroids(X, labels, k)
    history.append(distortion(X, centroids, labels))
    return centroids, labels, n_iter, history


def kmeans_fit(
    vectors: VectorSet,
    k: int,
    seed: int = 0,
    max_iter: int = 300,
    tol: float = 1e-4,
    n_init: int = 1,
) -> KMeansModel:
    """Fit KMeans on `vectors`.

    Points are ordered by id before fitting, so the result does not depend on input order.
    Restart r uses seed + r and the lowest final distortion wins.

    :raises ClusterCountError: `k` exceeds the number of distinct vectors.
    """

    if k < 1:
        raise ValueError("k must be >= 1")
    if n_init < 1:
        raise ValueError("n_init must be >= 1")

    order = sorted(range(len(vectors.ids)), key=lambda i: vectors.ids[i])
    ids = [vectors.ids[i] for i in order]
    X = vectors.vectors[np.asarray(order, dtype=np.int64)] if order else vectors.vectors
    X = sp.csr_matrix(X, dtype=np.float64) if sp.issparse(X) else np.asarray(X, dtype=np.float64)

    distinct = count_distinct(X) if X.shape[0] else 0
    if k > distinct:
        raise ClusterCountError(f"k={k} exceeds the {distinct} distinct vectors")

    best: tuple[np.ndarray, np.ndarray, int, list[float]] | None = None
    for restart in range(n_init):
        result = lloyd(X, k, np.random.default_rng(seed + restart), max_iter=max_iter, tol=tol)
        if best is None or result[3][-1] < best[3][-1]:
            best = result

    assert best is not None
    centroids, labels, n_iter, history = best

    LOG.info("KMeans k=%d: distortion %.6f after %d iterations", k, history[-1], n_iter)
    return KMeansModel(
        centroids=centroids,
        assignments={unit_id: int(label) for unit_id, label in zip(ids, labels, strict=True)},
        seed=seed,
        params={"k": k, "max_iter": max_iter, "tol": tol, "n_init": n_init},
        iterations_run=n_iter,
        distortion=history[-1],
        distortion_history=history,
    )
