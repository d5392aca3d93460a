"""CLM1 cluster model files.

Layout, little-endian:

    magic      4 bytes  b"CLM1"
    algorithm  u8       0 = kmeans, 1 = hdbscan
    n_clusters u32
    dim        u32
    seed       i64
    params     u32 length + UTF-8 JSON (sorted keys)
    centroids  n_clusters * dim float64, row-major
    count      u32
    records    count * (u16 id length, UTF-8 id, i32 label)

Records are written sorted by id.
"""

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

from theme_detection.errors import DataError
from theme_detection.misc import dumps_stable
from theme_detection.model.cluster import ClusterAlgorithm, ClusterModel, HdbscanModel, KMeansModel

MAGIC = b"CLM1"
HEADER = struct.Struct("<4sBIIq")
U32 = struct.Struct("<I")
RECORD_ID = struct.Struct("<H")
LABEL = struct.Struct("<i")

ALGORITHM_CODES = {ClusterAlgorithm.KMEANS: 0, ClusterAlgorithm.HDBSCAN: 1}


class ClusterArtifactError(DataError):
    pass


def _fit_details(model: ClusterModel) -> dict[str, Any]:
    if isinstance(model, KMeansModel):
        return {
            "iterations_run": model.iterations_run,
            "distortion": model.distortion,
            "distortion_history": model.distortion_history,
        }
    if isinstance(model, HdbscanModel):
        return {"min_cluster_size": model.min_cluster_size, "min_samples": model.min_samples}
    return {}


def dump_model(model: ClusterModel) -> bytes:
    meta = {"params": model.params, "fit": _fit_details(model)}
    params = json.dumps(meta, sort_keys=True).encode()
    centroids = np.ascontiguousarray(model.centroids, dtype="<f8")

    parts = [
        HEADER.pack(
            MAGIC, ALGORITHM_CODES[model.algorithm], model.n_clusters, model.dim, model.seed
        ),
        U32.pack(len(params)),
        params,
        centroids.tobytes(),
        U32.pack(len(model.assignments)),
    ]
    for unit_id in sorted(model.assignments):
        data = unit_id.encode()
        parts.append(RECORD_ID.pack(len(data)))
        parts.append(data)
        parts.append(LABEL.pack(model.assignments[unit_id]))
    return b"".join(parts)


def parse_model(buffer: bytes) -> ClusterModel:
    try:
        magic, code, n_clusters, dim, seed = HEADER.unpack_from(buffer)
        if magic != MAGIC:
            raise ClusterArtifactError(f"unknown magic {magic!r}")
        offset = HEADER.size

        (length,) = U32.unpack_from(buffer, offset)
        offset += U32.size
        meta = json.loads(buffer[offset : offset + length])
        offset += length

        size = n_clusters * dim * 8
        if offset + size > len(buffer):
            raise ClusterArtifactError("truncated centroid matrix")
        centroids = np.frombuffer(buffer, dtype="<f8", count=n_clusters * dim, offset=offset)
        centroids = centroids.reshape(n_clusters, dim).astype(np.float64)
        offset += size

        (count,) = U32.unpack_from(buffer, offset)
        offset += U32.size
        assignments: dict[str, int] = {}
        for _ in range(count):
            (id_length,) = RECORD_ID.unpack_from(buffer, offset)
            offset += RECORD_ID.size
            unit_id = buffer[offset : offset + id_length].decode()
            offset += id_length
            (label,) = LABEL.unpack_from(buffer, offset)
            offset += LABEL.size
            assignments[unit_id] = label
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ClusterArtifactError(f"corrupted cluster model: {e}") from e

    if offset != len(buffer):
        raise ClusterArtifactError(f"{len(buffer) - offset} trailing bytes")

    common = {
        "centroids": centroids,
        "assignments": assignments,
        "seed": seed,
        "params": meta["params"],
    }
    if code == ALGORITHM_CODES[ClusterAlgorithm.KMEANS]:
        return KMeansModel(**common, **meta["fit"])
    if code == ALGORITHM_CODES[ClusterAlgorithm.HDBSCAN]:
        return HdbscanModel(**common, **meta["fit"])
    raise ClusterArtifactError(f"unknown algorithm code {code}")


def summarize(model: ClusterModel) -> dict[str, Any]:
    """JSON summary stored next to the model file."""

    summary: dict[str, Any] = {
        "algorithm": model.algorithm.value,
        "n_clusters": model.n_clusters,
        "dim": model.dim,
        "seed": model.seed,
        "params": model.params,
        "assignments": len(model.assignments),
        "noise_count": model.noise_count,
        "sizes": model.sizes().tolist(),
    }
    if isinstance(model, KMeansModel):
        summary["k"] = model.k
        summary["distortion"] = model.distortion
        summary["iterations_run"] = model.iterations_run
    return summary


def save_model(model: ClusterModel, path: Path | str) -> None:
    """Write the CLM1 file and `<path>.json` with its summary."""

    path = Path(path)
    path.write_bytes(dump_model(model))
    summary = path.with_suffix(path.suffix + ".json")
    summary.write_text(dumps_stable(summarize(model)), encoding="utf-8")


def load_model(path: Path | str) -> ClusterModel:
    return parse_model(Path(path).read_bytes())
