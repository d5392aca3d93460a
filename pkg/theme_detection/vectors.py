import logging
import struct
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from theme_detection.errors import DataError
from theme_detection.model.vectors import VectorSet

LOG = logging.getLogger(__name__)

DENSE_MAGIC = b"EMB1"
SPARSE_MAGIC = b"SPV1"

HEADER = struct.Struct("<4sII")
SPARSE_HEADER = struct.Struct("<4sIIQ")
ID_LENGTH = struct.Struct("<H")


class EmbeddingFormatError(DataError):
    def __init__(
        self, message: str, record: int | None = None, record_id: str | None = None
    ) -> None:
        if record is not None:
            where = f"record {record}" + (f" ({record_id!r})" if record_id is not None else "")
            message = f"{where}: {message}"
        super().__init__(message)
        self.record = record
        self.record_id = record_id


def l2_normalize(vectors: np.ndarray | sp.csr_matrix) -> tuple[np.ndarray | sp.csr_matrix, int]:
    """Scale every nonzero row to unit L2 norm.

    A 1-d input is treated as a single row and returned 1-d.

    :return: Normalized copy and the number of zero rows, which are left unchanged.
    """

    if sp.issparse(vectors):
        matrix = sp.csr_matrix(vectors, dtype=np.float64, copy=True)
        norms = np.sqrt(np.asarray(matrix.multiply(matrix).sum(axis=1)).ravel())
        zeros = int((norms == 0).sum())
        scale = np.divide(1.0, norms, out=np.ones_like(norms), where=norms > 0)
        matrix.data *= np.repeat(scale, np.diff(matrix.indptr))
        return matrix, zeros

    array = np.asarray(vectors, dtype=np.float64)
    single = array.ndim == 1
    rows = array.reshape(1, -1) if single else array

    norms = np.linalg.norm(rows, axis=1)
    zeros = int((norms == 0).sum())
    result = rows / np.where(norms > 0, norms, 1.0)[:, None]

    return (result[0] if single else result), zeros


def normalize_set(vector_set: VectorSet) -> tuple[VectorSet, int]:
    vectors, zeros = l2_normalize(vector_set.vectors)
    if zeros:
        LOG.warning("%d of %d vectors are zero and stay unnormalized", zeros, len(vector_set))
    return VectorSet(ids=vector_set.ids, vectors=vectors, normalized=True), zeros


def _encode_ids(ids: list[str]) -> list[bytes]:
    encoded = []
    for index, unit_id in enumerate(ids):
        data = unit_id.encode()
        if len(data) > 0xFFFF:
            raise EmbeddingFormatError("id longer than 65535 bytes", index, unit_id)
        encoded.append(data)
    return encoded


def dump_embeddings(vector_set: VectorSet) -> bytes:
    """EMB1: header, then per record a u16 id length, id bytes and float32 components."""

    vectors = np.ascontiguousarray(vector_set.dense(), dtype="<f4")
    parts = [HEADER.pack(DENSE_MAGIC, len(vector_set), vector_set.dim)]
    for data, row in zip(_encode_ids(vector_set.ids), vectors, strict=True):
        parts.append(ID_LENGTH.pack(len(data)))
        parts.append(data)
        parts.append(row.tobytes())
    return b"".join(parts)


def _read_ids(
    buffer: bytes, offset: int, count: int, row_size: int
) -> tuple[list[str], list[int], int]:
    """Walk `count` records of (u16 length, id, row_size bytes).

    :return: Ids, row offsets and the end offset.
    """

    ids: list[str] = []
    rows: list[int] = []
    for record in range(count):
        if offset + ID_LENGTH.size > len(buffer):
            raise EmbeddingFormatError("truncated record header", record)
        (length,) = ID_LENGTH.unpack_from(buffer, offset)
        offset += ID_LENGTH.size

        if offset + length > len(buffer):
            raise EmbeddingFormatError("truncated id", record)
        try:
            unit_id = buffer[offset : offset + length].decode()
        except UnicodeDecodeError as e:
            raise EmbeddingFormatError("id is not valid UTF-8", record) from e
        offset += length

        if offset + row_size > len(buffer):
            raise EmbeddingFormatError(
                f"expected {row_size} bytes of vector data, found {len(buffer) - offset}",
                record,
                unit_id,
            )
        ids.append(unit_id)
        rows.append(offset)
        offset += row_size

    return ids, rows, offset


def parse_embeddings(buffer: bytes) -> VectorSet:
    if len(buffer) < HEADER.size:
        raise EmbeddingFormatError("truncated header")

    magic, count, dim = HEADER.unpack_from(buffer)
    if magic != DENSE_MAGIC:
        raise EmbeddingFormatError(f"unknown magic {magic!r}")

    ids, rows, end = _read_ids(buffer, HEADER.size, count, dim * 4)
    if end != len(buffer):
        # A short record shifts every later one; the last parsed record is the first suspect.
        raise EmbeddingFormatError(
            f"{len(buffer) - end} trailing bytes",
            count - 1 if count else None,
            ids[-1] if ids else None,
        )

    vectors = np.empty((count, dim), dtype=np.float32)
    for index, offset in enumerate(rows):
        vectors[index] = np.frombuffer(buffer, dtype="<f4", count=dim, offset=offset)

    return VectorSet(ids=ids, vectors=vectors)


def dump_sparse(vector_set: VectorSet) -> bytes:
    """SPV1: header with nnz, id records, then int64 indptr, int64 indices and float64 data."""

    matrix = sp.csr_matrix(vector_set.vectors)
    matrix.sort_indices()
    parts = [SPARSE_HEADER.pack(SPARSE_MAGIC, len(vector_set), vector_set.dim, matrix.nnz)]
    for data in _encode_ids(vector_set.ids):
        parts.append(ID_LENGTH.pack(len(data)))
        parts.append(data)
    parts.append(np.ascontiguousarray(matrix.indptr, dtype="<i8").tobytes())
    parts.append(np.ascontiguousarray(matrix.indices, dtype="<i8").tobytes())
    parts.append(np.ascontiguousarray(matrix.data, dtype="<f8").tobytes())
    return b"".join(parts)


def parse_sparse(buffer: bytes) -> VectorSet:
    if len(buffer) < SPARSE_HEADER.size:
        raise EmbeddingFormatError("truncated header")

    magic, count, dim, nnz = SPARSE_HEADER.unpack_from(buffer)
    if magic != SPARSE_MAGIC:
        raise EmbeddingFormatError(f"unknown magic {magic!r}")

    ids, _, offset = _read_ids(buffer, SPARSE_HEADER.size, count, 0)

    expected = (count + 1) * 8 + nnz * 16
    if len(buffer) - offset != expected:
        raise EmbeddingFormatError(
            f"expected {expected} bytes of matrix data, found {len(buffer) - offset}"
        )

    indptr = np.frombuffer(buffer, dtype="<i8", count=count + 1, offset=offset)
    offset += (count + 1) * 8
    indices = np.frombuffer(buffer, dtype="<i8", count=nnz, offset=offset)
    offset += nnz * 8
    data = np.frombuffer(buffer, dtype="<f8", count=nnz, offset=offset)

    if indptr[0] != 0 or indptr[-1] != nnz or (np.diff(indptr) < 0).any():
        raise EmbeddingFormatError("corrupted row pointers")
    if nnz and (indices.min() < 0 or indices.max() >= dim):
        raise EmbeddingFormatError("column index out of range")

    matrix = sp.csr_matrix((data.copy(), indices.copy(), indptr.copy()), shape=(count, dim))
    return VectorSet(ids=ids, vectors=matrix)


def save_vectors(vector_set: VectorSet, path: Path | str) -> None:
    Path(path).write_bytes(dump_vectors(vector_set))


def parse_vectors(buffer: bytes) -> VectorSet:
    """EMB1 or SPV1 content, dispatching on the magic bytes."""

    magic = buffer[:4]
    if magic == DENSE_MAGIC:
        return parse_embeddings(buffer)
    if magic == SPARSE_MAGIC:
        return parse_sparse(buffer)
    raise EmbeddingFormatError(f"unknown magic {magic!r}")


def dump_vectors(vector_set: VectorSet) -> bytes:
    """EMB1 for dense sets, SPV1 for sparse ones."""

    return dump_sparse(vector_set) if vector_set.is_sparse else dump_embeddings(vector_set)


def load_vectors(path: Path | str) -> VectorSet:
    return parse_vectors(Path(path).read_bytes())


def load_embeddings(path: Path | str) -> VectorSet:
    """Read an EMB1 embedding file."""

    vector_set = parse_embeddings(Path(path).read_bytes())
    LOG.info("Loaded %d embeddings of dim %d from %s", len(vector_set), vector_set.dim, path)
    return vector_set


def save_embeddings(vector_set: VectorSet, path: Path | str) -> None:
    Path(path).write_bytes(dump_embeddings(vector_set))


def align(vector_set: VectorSet, ids: list[str]) -> VectorSet:
    """Reorder rows to `ids`.

    :raises EmbeddingFormatError: An id has no vector.
    """

    index = {unit_id: row for row, unit_id in enumerate(vector_set.ids)}
    missing = [unit_id for unit_id in ids if unit_id not in index]
    if missing:
        raise EmbeddingFormatError(f"{len(missing)} ids have no vector, first {missing[0]!r}")

    rows = np.array([index[unit_id] for unit_id in ids], dtype=np.int64)
    return VectorSet(
        ids=list(ids), vectors=vector_set.vectors[rows], normalized=vector_set.normalized
    )
