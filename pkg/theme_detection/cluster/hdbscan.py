"""Density-based hierarchical clustering over mutual reachability distances.

The steps follow the standard algorithm: core distances, mutual reachability graph, its minimum
spanning tree (Prim), single linkage, a condensed tree pruned at `min_cluster_size`, and
excess-of-mass cluster selection. Floating point operations are ordered so that labels agree with
the brute-force reference implementation.

Up to `DENSE_LIMIT` points the distance and mutual reachability matrices are materialized. Past
that, core distances come from chunked nearest neighbour queries and Prim's algorithm computes
one mutual reachability row per step, so memory stays linear in the number of points.
"""

import logging
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from sklearn.neighbors import NearestNeighbors

from theme_detection.model.cluster import NOISE, HdbscanModel, HdbscanTree
from theme_detection.model.vectors import VectorSet
from theme_detection.vectors import l2_normalize

LOG = logging.getLogger(__name__)

MST_EDGE = np.dtype([("current_node", np.int64), ("next_node", np.int64), ("distance", np.float64)])

DENSE_LIMIT = 4096
CHUNK_BYTES = 8 * 2**20

Matrix = np.ndarray | sp.csr_matrix


def euclidean_distances(X: np.ndarray) -> np.ndarray:
    """Pairwise distances via the dot-product expansion, with a zero diagonal."""

    X = np.asarray(X, dtype=np.float64)
    XX = np.einsum("ij,ij->i", X, X)[:, np.newaxis]

    distances = -2 * (X @ X.T)
    distances += XX
    distances += XX.T
    np.maximum(distances, 0, out=distances)
    np.fill_diagonal(distances, 0)
    return np.sqrt(distances, out=distances)


def core_distances(distances: np.ndarray, min_samples: int) -> np.ndarray:
    """Distance to the `min_samples`-th nearest point, the point itself included."""

    return np.ascontiguousarray(np.partition(distances, min_samples - 1, axis=0)[min_samples - 1])


def mutual_reachability(distances: np.ndarray, core: np.ndarray) -> np.ndarray:
    """max(core(a), core(b), d(a, b)) for every pair."""

    return np.maximum(np.maximum(core[:, None], core[None, :]), distances)


def squared_norms(X: Matrix) -> np.ndarray:
    if sp.issparse(X):
        return np.asarray(X.multiply(X).sum(axis=1), dtype=np.float64).ravel()
    return np.einsum("ij,ij->i", X, X)


def chunked_core_distances(
    X: Matrix, min_samples: int, chunk_bytes: int = CHUNK_BYTES
) -> np.ndarray:
    """Same as `core_distances`, without the n x n matrix.

    Queries run over blocks of rows sized so that one block of distances fits `chunk_bytes`.
    """

    n = X.shape[0]
    neighbors = NearestNeighbors(n_neighbors=min_samples, algorithm="brute").fit(X)
    chunk = max(1, chunk_bytes // (8 * n))

    core = np.empty(n, dtype=np.float64)
    for start in range(0, n, chunk):
        distances, _ = neighbors.kneighbors(X[start : start + chunk])
        core[start : start + chunk] = distances[:, -1]
    return core


def reachability_rows(X: Matrix, core: np.ndarray) -> Callable[[int, np.ndarray], np.ndarray]:
    """Mutual reachability from one node to a set of others, computed on demand."""

    norms = squared_norms(X)

    def row(node: int, others: np.ndarray) -> np.ndarray:
        if sp.issparse(X):
            dots = (X @ X[node].T).toarray().ravel()
        else:
            dots = X @ X[node]

        distances = -2 * dots[others]
        distances += norms[others]
        distances += norms[node]
        np.maximum(distances, 0, out=distances)
        np.sqrt(distances, out=distances)
        return np.maximum(np.maximum(core[node], core[others]), distances)

    return row


def minimum_spanning_tree(reachability: np.ndarray) -> np.ndarray:
    """Prim's algorithm from node 0 over a dense graph. Edges come out in insertion order."""

    return prim(reachability.shape[0], lambda node, others: reachability[node][others])


def prim(n: int, row: Callable[[int, np.ndarray], np.ndarray]) -> np.ndarray:
    """Prim's algorithm from node 0, where `row(node, others)` gives edge weights from `node`."""

    mst = np.empty(n - 1, dtype=MST_EDGE)

    current_labels = np.arange(n, dtype=np.int64)
    current_node = 0
    min_reachability = np.full(n, fill_value=np.inf, dtype=np.float64)

    for i in range(n - 1):
        label_filter = current_labels != current_node
        current_labels = current_labels[label_filter]
        left = min_reachability[label_filter]
        right = row(current_node, current_labels)
        min_reachability = np.minimum(left, right)

        new_node_index = int(np.argmin(min_reachability))
        new_node = int(current_labels[new_node_index])
        mst[i] = (current_node, new_node, min_reachability[new_node_index])
        current_node = new_node

    return mst


def single_linkage(mst: np.ndarray) -> np.ndarray:
    """Merge MST edges by ascending weight.

    :return: (n - 1) x 4 array of (left, right, distance, size); merge i creates node n + i.
    """

    mst = mst[np.argsort(mst["distance"])]
    n = mst.shape[0] + 1

    parent = np.full(2 * n - 1, -1, dtype=np.int64)
    size = np.concatenate([np.ones(n, dtype=np.int64), np.zeros(n - 1, dtype=np.int64)])

    def find(node: int) -> int:
        root = node
        while parent[root] != -1:
            root = int(parent[root])
        while node != root:
            up = int(parent[node])
            parent[node] = root
            node = up
        return root

    linkage = np.zeros((n - 1, 4), dtype=np.float64)
    for i, (a, b, distance) in enumerate(mst.tolist()):
        left, right = find(a), find(b)
        linkage[i] = (left, right, distance, size[left] + size[right])

        parent[left] = parent[right] = n + i
        size[n + i] = size[left] + size[right]

    return linkage


def _bfs(linkage: np.ndarray, root: int) -> list[int]:
    n = linkage.shape[0] + 1
    result: list[int] = []
    queue = [root]
    while queue:
        result.extend(queue)
        queue = [
            int(child)
            for node in queue
            if node >= n
            for child in (linkage[node - n, 0], linkage[node - n, 1])
        ]
    return result


def condense_tree(linkage: np.ndarray, min_cluster_size: int) -> np.ndarray:
    """Collapse the single linkage tree, keeping splits where both sides reach `min_cluster_size`.

    :return: Rows of (parent, child, lambda, child size). Points keep ids 0..n-1, the root is n
        and new clusters are numbered from n + 1 in breadth-first order.
    """

    n = linkage.shape[0] + 1
    root = 2 * linkage.shape[0]
    next_label = n + 1

    relabel = np.empty(root + 1, dtype=np.int64)
    relabel[root] = n
    ignore = np.zeros(root + 1, dtype=bool)
    rows: list[tuple[int, int, float, int]] = []

    def size_of(node: int) -> int:
        return int(linkage[node - n, 3]) if node >= n else 1

    def fall_out(parent: int, subtree: int, lambda_value: float) -> None:
        for sub_node in _bfs(linkage, subtree):
            if sub_node < n:
                rows.append((parent, sub_node, lambda_value, 1))
            ignore[sub_node] = True

    for node in _bfs(linkage, root):
        if ignore[node] or node < n:
            continue

        left, right, distance, _ = linkage[node - n]
        left, right = int(left), int(right)
        lambda_value = 1.0 / distance if distance > 0.0 else np.inf

        left_count, right_count = size_of(left), size_of(right)
        parent = int(relabel[node])

        if left_count >= min_cluster_size and right_count >= min_cluster_size:
            relabel[left] = next_label
            next_label += 1
            rows.append((parent, int(relabel[left]), lambda_value, left_count))

            relabel[right] = next_label
            next_label += 1
            rows.append((parent, int(relabel[right]), lambda_value, right_count))

        elif left_count < min_cluster_size and right_count < min_cluster_size:
            fall_out(parent, left, lambda_value)
            fall_out(parent, right, lambda_value)

        elif left_count < min_cluster_size:
            relabel[right] = parent
            fall_out(parent, left, lambda_value)

        else:
            relabel[left] = parent
            fall_out(parent, right, lambda_value)

    return np.array(rows, dtype=np.float64).reshape(-1, 4)


def compute_stability(condensed: np.ndarray) -> dict[int, float]:
    """Sum over each cluster's rows of (lambda - lambda_birth) * size; the root is born at 0."""

    parents = condensed[:, 0].astype(np.int64)
    children = condensed[:, 1].astype(np.int64)

    smallest = int(parents.min())
    largest = max(int(children.max()), smallest)

    births = np.full(largest + 1, np.nan, dtype=np.float64)
    for child, value in zip(children, condensed[:, 2], strict=True):
        births[child] = value
    births[smallest] = 0.0

    result = np.zeros(int(parents.max()) - smallest + 1, dtype=np.float64)
    for parent, value, size in zip(parents, condensed[:, 2], condensed[:, 3], strict=True):
        result[parent - smallest] += (value - births[parent]) * size

    return {smallest + i: float(v) for i, v in enumerate(result)}


def _cluster_descendants(cluster_rows: np.ndarray, node: int) -> list[int]:
    parents = cluster_rows[:, 0].astype(np.int64)
    children = cluster_rows[:, 1].astype(np.int64)

    result: list[int] = []
    queue = np.array([node], dtype=np.int64)
    while queue.shape[0] > 0:
        result.extend(queue.tolist())
        queue = children[np.isin(parents, queue)]
    return result


def select_clusters(
    condensed: np.ndarray,
    stability: dict[int, float],
    allow_single_cluster: bool = False,
) -> list[int]:
    """Excess-of-mass selection, visiting clusters from the leaves up.

    A cluster is kept unless its children's combined stability exceeds its own; the root is
    only eligible with `allow_single_cluster`.
    """

    stability = dict(stability)
    node_list = sorted(stability, reverse=True)
    if not allow_single_cluster:
        node_list = node_list[:-1]

    cluster_rows = condensed[condensed[:, 3] > 1]
    is_cluster = {node: True for node in node_list}

    for node in node_list:
        children = cluster_rows[cluster_rows[:, 0] == node, 1].astype(np.int64)
        subtree_stability = float(np.sum([stability[child] for child in children]))

        if subtree_stability > stability[node]:
            is_cluster[node] = False
            stability[node] = subtree_stability
        else:
            for sub_node in _cluster_descendants(cluster_rows, node):
                if sub_node != node:
                    is_cluster[sub_node] = False

    return sorted(node for node, selected in is_cluster.items() if selected)


def label_points(
    condensed: np.ndarray, selected: Sequence[int], allow_single_cluster: bool = False
) -> np.ndarray:
    """Label every point with its nearest selected ancestor, or noise."""

    parents = condensed[:, 0].astype(np.int64)
    children = condensed[:, 1].astype(np.int64)
    lambdas = condensed[:, 2]

    root = int(parents.min())
    label_of = {cluster: label for label, cluster in enumerate(sorted(selected))}
    parent_of = {int(c): int(p) for p, c in zip(parents, children, strict=True)}

    labels = np.full(root, NOISE, dtype=np.int64)
    threshold = lambdas[parents == root].max() if parents.size else np.inf

    for point in range(root):
        node = parent_of.get(point, root)
        while node not in label_of and node != root:
            node = parent_of[node]

        if node in label_of and node != root:
            labels[point] = label_of[node]
        elif node == root and root in label_of and allow_single_cluster and len(label_of) == 1:
            if lambdas[children == point][0] >= threshold:
                labels[point] = label_of[root]

    return labels


def hdbscan_tree(
    X: Matrix,
    min_cluster_size: int = 5,
    min_samples: int = 3,
    allow_single_cluster: bool = False,
    dense_limit: int = DENSE_LIMIT,
) -> HdbscanTree:
    """Run every stage and return the intermediate products along with the labels.

    `X` may be dense or CSR. Inputs with more than `dense_limit` rows never build an n x n matrix.
    """

    n = X.shape[0]
    if n <= dense_limit:
        dense = X.toarray() if sp.issparse(X) else X
        distances = euclidean_distances(dense)
        core = core_distances(distances, min_samples)
        mst = minimum_spanning_tree(mutual_reachability(distances, core))
    else:
        X = X.tocsr() if sp.issparse(X) else np.asarray(X, dtype=np.float64)
        core = chunked_core_distances(X, min_samples)
        LOG.debug("HDBSCAN on %d points: building the MST row by row", n)
        mst = prim(n, reachability_rows(X, core))

    linkage = single_linkage(mst)
    condensed = condense_tree(linkage, min_cluster_size)
    stability = compute_stability(condensed)
    selected = select_clusters(condensed, stability, allow_single_cluster)
    labels = label_points(condensed, selected, allow_single_cluster)

    LOG.debug("HDBSCAN on %d points: %d condensed rows, selected %s", n, len(condensed), selected)
    return HdbscanTree(
        core_distances=core,
        mst=np.column_stack(
            [mst["current_node"], mst["next_node"], mst["distance"]]
        ).astype(np.float64),
        single_linkage=linkage,
        condensed=condensed,
        stability=stability,
        selected=selected,
        labels=labels,
    )


def cluster_centroids(X: Matrix, labels: np.ndarray, n_clusters: int) -> np.ndarray:
    """Unweighted member means, L2-normalized. Noise contributes to no centroid."""

    centroids = np.zeros((n_clusters, X.shape[1]), dtype=np.float64)
    for cluster in range(n_clusters):
        centroids[cluster] = np.asarray(X[labels == cluster].mean(axis=0)).ravel()
    normalized, _ = l2_normalize(centroids)
    return normalized


def hdbscan_fit(
    vectors: VectorSet,
    min_cluster_size: int = 5,
    min_samples: int = 3,
    allow_single_cluster: bool = False,
    dense_limit: int = DENSE_LIMIT,
) -> HdbscanModel:
    """Fit HDBSCAN on `vectors`.

    With fewer points than `min_cluster_size` (or than `min_samples`) every point is noise.
    Sparse rows stay sparse throughout.
    """

    if min_cluster_size < 2:
        raise ValueError("min_cluster_size must be >= 2")
    if min_samples < 1:
        raise ValueError("min_samples must be >= 1")

    if sp.issparse(vectors.vectors):
        X = sp.csr_matrix(vectors.vectors, dtype=np.float64)
    else:
        X = np.asarray(vectors.vectors, dtype=np.float64)
    n = X.shape[0]

    if n < max(min_cluster_size, min_samples, 2):
        LOG.warning("HDBSCAN on %d points with min_cluster_size=%d: all noise", n, min_cluster_size)
        labels = np.full(n, NOISE, dtype=np.int64)
    else:
        tree = hdbscan_tree(X, min_cluster_size, min_samples, allow_single_cluster, dense_limit)
        labels = tree.labels

    n_clusters = int(labels.max()) + 1 if n and labels.max() >= 0 else 0
    centroids = cluster_centroids(X, labels, n_clusters)

    LOG.info(
        "HDBSCAN: %d clusters, %d noise of %d points",
        n_clusters,
        int((labels == NOISE).sum()),
        n,
    )
    return HdbscanModel(
        centroids=centroids,
        assignments={
            unit_id: int(label) for unit_id, label in zip(vectors.ids, labels, strict=True)
        },
        params={
            "min_cluster_size": min_cluster_size,
            "min_samples": min_samples,
            "allow_single_cluster": allow_single_cluster,
        },
        min_cluster_size=min_cluster_size,
        min_samples=min_samples,
    )
