import logging
from collections import Counter
from typing import Sequence

import numpy as np

from theme_detection.cluster.kmeans import kmeans_fit
from theme_detection.errors import DataError
from theme_detection.misc import parallel_map
from theme_detection.model.cluster import ElbowResult
from theme_detection.model.vectors import VectorSet

LOG = logging.getLogger(__name__)


class ElbowGridError(DataError):
    pass


def k_grid(k_start: int, k_step: int, k_max: int) -> list[int]:
    if k_start < 1 or k_step < 1:
        raise ElbowGridError("k_start and k_step must be >= 1")

    grid = list(range(k_start, k_max + 1, k_step))
    if len(grid) < 3:
        raise ElbowGridError(f"elbow grid {grid} has fewer than 3 points")
    return grid


def inflection_point(grid: Sequence[int], distortions: Sequence[float]) -> int:
    """Interior k with the largest second difference d(k - step) - 2 d(k) + d(k + step).

    The first maximum wins.
    """

    if len(grid) != len(distortions) or len(grid) < 3:
        raise ElbowGridError("need at least 3 (k, distortion) points")

    d = np.asarray(distortions, dtype=np.float64)
    second = d[:-2] - 2 * d[1:-1] + d[2:]
    return int(grid[1 + int(np.argmax(second))])


def modal_k(inflections: Sequence[int]) -> int:
    """Most frequent inflection point; ties go to the smaller k."""

    counts = Counter(inflections)
    return min(counts, key=lambda k: (-counts[k], k))


def elbow_select(
    vectors: VectorSet,
    k_start: int,
    k_step: int,
    k_max: int,
    trials: int = 5,
    seed: int = 0,
    max_iter: int = 300,
    tol: float = 1e-4,
    workers: int = 1,
) -> ElbowResult:
    """Choose k as the modal inflection point of the distortion curve across seeded trials.

    Trial t fits every k on the grid with seed + t.
    """

    if trials < 1:
        raise ElbowGridError("trials must be >= 1")

    grid = k_grid(k_start, k_step, k_max)

    def run(t: int) -> list[float]:
        curve = [
            kmeans_fit(vectors, k, seed=seed + t, max_iter=max_iter, tol=tol).distortion
            for k in grid
        ]
        LOG.debug("Elbow trial %d: %s", t, curve)
        return curve

    distortions = parallel_map(run, range(trials), workers)
    inflections = [inflection_point(grid, curve) for curve in distortions]
    chosen = modal_k(inflections)

    LOG.info("Elbow over k=%s: inflections %s, chose k=%d", grid, inflections, chosen)
    return ElbowResult(
        k_grid=grid, distortions=distortions, inflections=inflections, chosen_k=chosen
    )
