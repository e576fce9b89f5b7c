"""Exact cosine search over unit vectors and per-publication pooling."""

from __future__ import annotations

import struct
from typing import Iterable, Sequence

import numpy as np

from .errors import ColdStartError, DataError, DimensionMismatch, EmptyInputError, UnknownDocument

POOLING = ("mean", "p75", "max")

_MAGIC = b"RVEC"
_VERSION = 1
_HEADER = struct.Struct("<4sIII")  # magic, version, dim, count


class EmbeddingStore:
    """Vectors are L2-normalized on insert, so cosine is a dot product."""

    def __init__(self, dim: int):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim
        self._ids: list[str] = []
        self._pos: dict[str, int] = {}
        self._rows: list[np.ndarray] = []
        self._matrix: np.ndarray | None = None

    @classmethod
    def from_vectors(cls, ids: Sequence[str], vectors) -> "EmbeddingStore":
        vectors = np.asarray(vectors, dtype=np.float64)
        store = cls(vectors.shape[1])
        store.add_many(ids, vectors)
        return store

    def _check(self, vector) -> np.ndarray:
        v = np.asarray(vector, dtype=np.float64)
        if v.shape != (self.dim,):
            raise DimensionMismatch(f"expected a vector of length {self.dim}, got shape {v.shape}")
        return v

    def add(self, doc_id: str, vector) -> None:
        v = self._check(vector)
        norm = np.linalg.norm(v)
        if not np.isfinite(norm) or norm == 0:
            raise DataError(f"cannot normalize vector for {doc_id!r}")
        v = v / norm
        if doc_id in self._pos:
            self._rows[self._pos[doc_id]] = v
        else:
            self._pos[doc_id] = len(self._ids)
            self._ids.append(doc_id)
            self._rows.append(v)
        self._matrix = None

    def add_many(self, ids: Iterable[str], vectors) -> None:
        for doc_id, v in zip(ids, vectors):
            self.add(doc_id, v)

    def copy(self) -> "EmbeddingStore":
        other = EmbeddingStore(self.dim)
        other._ids = list(self._ids)
        other._pos = dict(self._pos)
        other._rows = list(self._rows)
        return other

    @property
    def ids(self) -> list[str]:
        return list(self._ids)

    @property
    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            self._matrix = np.stack(self._rows) if self._rows else np.zeros((0, self.dim))
        return self._matrix

    def __contains__(self, doc_id) -> bool:
        return doc_id in self._pos

    def __len__(self) -> int:
        return len(self._ids)

    def get(self, doc_id: str) -> np.ndarray:
        try:
            return self._rows[self._pos[doc_id]]
        except KeyError:
            raise UnknownDocument(doc_id) from None

    def similarities(self, query_vector) -> np.ndarray:
        q = self._check(query_vector)
        return self.matrix @ (q / np.linalg.norm(q))

    # -- persistence -------------------------------------------------------

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(_MAGIC, _VERSION, self.dim, len(self._ids)))
            for doc_id, row in zip(self._ids, self._rows):
                raw = doc_id.encode("utf-8")
                fh.write(struct.pack("<I", len(raw)))
                fh.write(raw)
                fh.write(row.astype("<f4").tobytes())

    @classmethod
    def load(cls, path) -> "EmbeddingStore":
        with open(path, "rb") as fh:
            blob = fh.read()
        if len(blob) < _HEADER.size:
            raise DataError(f"{path}: truncated vector file")
        magic, version, dim, count = _HEADER.unpack_from(blob)
        if magic != _MAGIC or version != _VERSION:
            raise DataError(f"{path}: not a version-{_VERSION} vector file")
        store = cls(dim)
        offset = _HEADER.size
        for _ in range(count):
            (n,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            doc_id = blob[offset:offset + n].decode("utf-8")
            offset += n
            row = np.frombuffer(blob, dtype="<f4", count=dim, offset=offset)
            offset += 4 * dim
            store.add(doc_id, row.astype(np.float64))
        return store


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    return float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))


def threshold_recall(store: EmbeddingStore, query_vector, recall_threshold: float) -> set[str]:
    """Ids whose cosine with the query is strictly above the threshold."""
    if not -1.0 <= recall_threshold <= 1.0:
        raise ValueError(f"recall threshold {recall_threshold} outside [-1, 1]")
    sims = store.similarities(query_vector)
    ids = store.ids
    return {ids[i] for i in np.flatnonzero(sims > recall_threshold)}


def pool_scores(similarities: Sequence[float], strategy: str) -> float:
    """Aggregate per-publication similarities.

    ``p75`` interpolates linearly between sorted values at rank 0.75*(n-1).
    """
    values = sorted(float(s) for s in similarities)
    if not values:
        raise EmptyInputError("cannot pool an empty list of similarities")
    if strategy == "mean":
        return sum(values) / len(values)
    if strategy == "max":
        return values[-1]
    if strategy == "p75":
        pos = 0.75 * (len(values) - 1)
        lo = int(pos)
        frac = pos - lo
        if frac == 0:
            return values[lo]
        return values[lo] + frac * (values[lo + 1] - values[lo])
    raise ValueError(f"unknown pooling strategy {strategy!r}")


def baseline_reviewer_score(
    store: EmbeddingStore, query_id: str, publication_ids: Iterable[str], strategy: str
) -> float:
    """Pooled cosine between a query paper and a reviewer's embedded papers.

    ``publication_ids`` are the reviewer's papers (already window-restricted);
    ids missing from the store are ignored.
    """
    q = store.get(query_id)
    sims = [float(store.get(pid) @ q) for pid in sorted(set(publication_ids)) if pid in store]
    if not sims:
        raise ColdStartError("reviewer has no embedded publications")
    return pool_scores(sims, strategy)

