import json
import tracemalloc
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp
from sklearn.cluster import HDBSCAN

from theme_detection.cluster.hdbscan import (
    chunked_core_distances,
    core_distances,
    euclidean_distances,
    hdbscan_fit,
    hdbscan_tree,
    mutual_reachability,
)
from theme_detection.model.cluster import NOISE
from theme_detection.model.vectors import VectorSet

FIXTURES = [
    json.loads(line)
    for line in (Path(__file__).parent / "fixtures" / "hdbscan.jsonl").read_text().splitlines()
]


def two_blobs_with_outliers(seed: int) -> np.ndarray:
    """Two blobs of 10 points (sigma 0.05) at (0, 0) and (5, 5) plus 3 far outliers."""

    rng = np.random.default_rng(seed)
    blobs = [center + rng.normal(scale=0.05, size=(10, 2)) for center in ([0.0, 0.0], [5.0, 5.0])]
    outliers = np.array([[30.0, -30.0], [-30.0, 30.0], [40.0, 40.0]])
    outliers += rng.uniform(-3, 3, size=(3, 2))
    return np.vstack([*blobs, outliers])


def mixture(seed: int) -> np.ndarray:
    """2 to 4 blobs of varying size and spread with up to 5 uniform outliers."""

    rng = np.random.default_rng(1000 + seed)
    parts = []
    for _ in range(int(rng.integers(2, 5))):
        center = rng.uniform(-20, 20, size=2)
        scale = rng.uniform(0.1, 1.0)
        parts.append(center + rng.normal(scale=scale, size=(int(rng.integers(8, 26)), 2)))
    parts.append(rng.uniform(-40, 40, size=(int(rng.integers(0, 6)), 2)))
    return np.vstack(parts)


def reference_labels(X: np.ndarray, allow_single_cluster: bool = False) -> np.ndarray:
    return HDBSCAN(
        min_cluster_size=5,
        min_samples=3,
        algorithm="brute",
        allow_single_cluster=allow_single_cluster,
    ).fit(X).labels_


def fit_labels(X, allow_single_cluster: bool = False, **kwargs) -> np.ndarray:
    ids = [f"x{i:04d}" for i in range(X.shape[0])]
    model = hdbscan_fit(VectorSet(ids=ids, vectors=X), 5, 3, allow_single_cluster, **kwargs)
    return np.array([model.assignments[unit_id] for unit_id in ids])


def assert_same_partition(labels: np.ndarray, expected: np.ndarray) -> None:
    np.testing.assert_array_equal(labels == NOISE, expected == NOISE)
    pairs = {(int(a), int(b)) for a, b in zip(labels, expected) if a != NOISE}
    assert len(pairs) == len({a for a, _ in pairs}) == len({b for _, b in pairs})


class TestHdbscanFit:
    def test_two_blobs(self):
        labels = fit_labels(two_blobs_with_outliers(0))
        assert (labels[20:] == NOISE).all()
        assert len(set(labels[:10])) == 1 and len(set(labels[10:20])) == 1
        assert labels[0] != labels[10] and NOISE not in labels[:20]

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_reference_on_blobs(self, seed):
        X = two_blobs_with_outliers(seed)
        assert_same_partition(fit_labels(X), reference_labels(X))

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_reference_on_mixtures(self, seed):
        X = mixture(seed)
        assert_same_partition(fit_labels(X), reference_labels(X))

    @pytest.mark.parametrize("fixture", FIXTURES, ids=[f["name"] for f in FIXTURES])
    def test_committed_fixtures(self, fixture):
        X = np.array(fixture["points"], dtype=np.float64)
        expected = np.array(fixture["labels"])
        labels = fit_labels(X)
        assert_same_partition(labels, expected)
        assert_same_partition(labels, reference_labels(X))

    @pytest.mark.parametrize("allow_single_cluster", [False, True])
    def test_matches_reference_on_single_gaussian_blob(self, allow_single_cluster):
        X = np.random.default_rng(3).normal(scale=0.05, size=(20, 2))
        expected = reference_labels(X, allow_single_cluster)
        assert_same_partition(fit_labels(X, allow_single_cluster), expected)

    def test_single_tight_blob(self):
        X = np.array([[i, j] for i in range(4) for j in range(5)], dtype=np.float64)
        labels = fit_labels(X, allow_single_cluster=True)
        assert (labels == 0).all()
        assert_same_partition(labels, reference_labels(X, allow_single_cluster=True))

    def test_fewer_points_than_min_cluster_size(self):
        X = np.random.default_rng(0).normal(size=(4, 3))
        model = hdbscan_fit(VectorSet(ids=list("abcd"), vectors=X), 5, 3)
        assert set(model.assignments.values()) == {NOISE}
        assert model.n_clusters == 0
        assert model.centroids.shape == (0, 3)

    def test_fewer_points_than_min_samples(self):
        X = np.random.default_rng(0).normal(size=(6, 2))
        model = hdbscan_fit(VectorSet(ids=list("abcdef"), vectors=X), 5, 8)
        assert model.noise_count == 6

    def test_clusters_respect_min_cluster_size(self):
        X = mixture(4)
        model = hdbscan_fit(VectorSet(ids=[str(i) for i in range(len(X))], vectors=X), 5, 3)
        assert (model.sizes() >= 5).all()

    def test_centroids_are_normalized_member_means(self):
        X = two_blobs_with_outliers(1) + 1.0
        ids = [f"x{i:03d}" for i in range(len(X))]
        model = hdbscan_fit(VectorSet(ids=ids, vectors=X), 5, 3)
        labels = np.array([model.assignments[unit_id] for unit_id in ids])
        for cluster in range(model.n_clusters):
            mean = X[labels == cluster].mean(axis=0)
            np.testing.assert_allclose(model.centroids[cluster], mean / np.linalg.norm(mean))

    def test_sparse_input(self):
        X = two_blobs_with_outliers(2)
        ids = [f"x{i:03d}" for i in range(len(X))]
        dense = hdbscan_fit(VectorSet(ids=ids, vectors=X), 5, 3)
        sparse = hdbscan_fit(VectorSet(ids=ids, vectors=sp.csr_matrix(X)), 5, 3)
        assert dense.assignments == sparse.assignments

    @pytest.mark.parametrize("kwargs", [{"min_cluster_size": 1}, {"min_samples": 0}])
    def test_invalid_parameters(self, kwargs):
        X = np.zeros((3, 2))
        with pytest.raises(ValueError):
            hdbscan_fit(VectorSet(ids=list("abc"), vectors=X), **kwargs)


class TestHdbscanTree:
    def test_intermediate_products(self):
        X = mixture(7)
        n = len(X)
        tree = hdbscan_tree(X, 5, 3)

        assert tree.mst.shape == (n - 1, 3)
        assert tree.single_linkage.shape == (n - 1, 4)
        assert tree.single_linkage[-1, 3] == n
        assert set(tree.condensed[tree.condensed[:, 3] == 1, 1].astype(int)) == set(range(n))

    def test_mutual_reachability(self):
        X = mixture(8)
        distances = euclidean_distances(X)
        core = core_distances(distances, 3)
        reachability = mutual_reachability(distances, core)

        np.testing.assert_array_equal(reachability, reachability.T)
        assert (reachability >= distances).all()
        expected_core = np.sort(distances, axis=1)[:, 2]
        np.testing.assert_allclose(core, expected_core)

    def test_core_distance_counts_the_point_itself(self):
        distances = euclidean_distances(np.array([[0.0], [1.0], [3.0]]))
        np.testing.assert_allclose(core_distances(distances, 1), [0.0, 0.0, 0.0])
        np.testing.assert_allclose(core_distances(distances, 2), [1.0, 1.0, 2.0])


class TestRowByRow:
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_dense_path(self, seed):
        X = mixture(seed)
        dense = hdbscan_tree(X, 5, 3)
        rows = hdbscan_tree(X, 5, 3, dense_limit=0)

        np.testing.assert_allclose(rows.core_distances, dense.core_distances, atol=1e-9)
        assert rows.mst[:, 2].sum() == pytest.approx(dense.mst[:, 2].sum())
        assert_same_partition(rows.labels, dense.labels)

    @pytest.mark.parametrize("fixture", FIXTURES[:3], ids=[f["name"] for f in FIXTURES[:3]])
    def test_committed_fixtures(self, fixture):
        X = np.array(fixture["points"], dtype=np.float64)
        assert_same_partition(fit_labels(X, dense_limit=0), np.array(fixture["labels"]))

    def test_sparse_rows(self):
        X = two_blobs_with_outliers(4)
        dense = fit_labels(X)
        assert_same_partition(fit_labels(sp.csr_matrix(X), dense_limit=0), dense)

    def test_chunked_core_distances(self):
        X = mixture(9)
        expected = core_distances(euclidean_distances(X), 3)
        small_chunks = chunked_core_distances(X, 3, chunk_bytes=64)
        np.testing.assert_allclose(small_chunks, expected, atol=1e-9)
        sparse = chunked_core_distances(sp.csr_matrix(X), 3)
        np.testing.assert_allclose(sparse, expected, atol=1e-9)

    def test_memory_stays_below_one_distance_matrix(self):
        n = 3000
        centers = np.random.default_rng(0).normal(scale=10.0, size=(6, 16))
        X = np.repeat(centers, n // 6, axis=0)
        X += np.random.default_rng(1).normal(scale=0.5, size=X.shape)

        tracemalloc.start()
        try:
            labels = fit_labels(X, dense_limit=1000)
            _, peak = tracemalloc.get_traced_memory()
        finally:
            tracemalloc.stop()

        assert peak < n * n * 8
        blobs = np.repeat(np.arange(6), n // 6)
        assert all(len(set(blobs[labels == label])) == 1 for label in set(labels) - {NOISE})
        assert len(set(labels) - {NOISE}) >= 6
