"""Candidate reviewer pools and conflict-of-interest filtering."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .corpus import CoauthorGraph, Corpus
from .dense import EmbeddingStore, threshold_recall
from .errors import EmptyInputError


@dataclass(frozen=True)
class CandidatePool:
    query_paper_id: str
    candidates: frozenset[str]
    provenance: Mapping[str, frozenset[str]] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "query_paper_id": self.query_paper_id,
            "candidates": sorted(self.candidates),
            "provenance": {a: sorted(p) for a, p in sorted(self.provenance.items())},
        }


def recall_candidates(
    store: EmbeddingStore, corpus: Corpus, query_paper_id: str, recall_threshold: float, query_vector=None
) -> CandidatePool:
    """Authors of every paper whose cosine with the query exceeds the threshold.

    The query paper itself never counts as recalled evidence.
    """
    if query_vector is None:
        query_vector = store.get(query_paper_id)
    provenance: dict[str, set[str]] = {}
    for pid in threshold_recall(store, query_vector, recall_threshold):
        if pid == query_paper_id or pid not in corpus.papers:
            continue
        for author_id in corpus.paper_authors(pid):
            provenance.setdefault(author_id, set()).add(pid)
    return CandidatePool(
        query_paper_id,
        frozenset(provenance),
        {a: frozenset(p) for a, p in provenance.items()},
    )


def conflicted(query_authors: Iterable[str], graph: CoauthorGraph) -> set[str]:
    """Query authors plus everyone who has co-authored with one of them."""
    out = set(query_authors)
    for a in list(out):
        out |= graph.neighbors(a)
    return out


def coi_filter(pool: CandidatePool, query_authors: Iterable[str], graph: CoauthorGraph) -> CandidatePool:
    """Drop the query's own authors and their direct co-authors. Pure."""
    query_authors = set(query_authors)
    if not query_authors:
        raise EmptyInputError(f"query paper {pool.query_paper_id} has no authors")
    blocked = conflicted(query_authors, graph)
    kept = frozenset(c for c in pool.candidates if c not in blocked)
    return CandidatePool(
        pool.query_paper_id,
        kept,
        {a: p for a, p in pool.provenance.items() if a in kept},
    )
