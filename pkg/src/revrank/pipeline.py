"""Stage helpers shared by the CLI and the end-to-end tests."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .clients import QUERY_INSTRUCTION, REVIEWER_INSTRUCTION, Embedder, KeywordExtractor, embed_texts
from .corpus import Corpus, Paper, papers_in_window, two_year_window
from .dense import POOLING, EmbeddingStore, baseline_reviewer_score
from .errors import ColdStartError, DataError
from .lexical import Bm25Index, tfidf_cosine, tokenize
from .profile import ReviewerProfile, profile_reviewer
from .train import AdapterModel

log = logging.getLogger(__name__)

SCORERS = ("trained-adapter", "profile-cosine", "bm25", "tfidf") + tuple(f"pooled-baseline:{p}" for p in POOLING)

PAPER_INDEX = "papers.bm25.json"
PROFILE_INDEX = "profiles.bm25.json"
PAPER_VECTORS = "papers.vec"
PROFILE_VECTORS = "profiles.vec"


def profile_window(corpus: Corpus, reference: date | None = None) -> tuple[date, date]:
    return two_year_window(reference or corpus.max_revised())


def build_profiles(corpus: Corpus, client: KeywordExtractor, n_keywords: int, window) -> tuple[dict, list[str]]:
    """Profiles for every author with a paper in the window, plus cold-start ids."""
    profiles, cold = {}, []
    for author_id in sorted(corpus.authors):
        try:
            profiles[author_id] = profile_reviewer(corpus.authors[author_id], corpus.papers, client,
                                                   n_keywords, window)
        except ColdStartError:
            cold.append(author_id)
    return profiles, cold


def build_indexes(corpus: Corpus, profiles: Mapping[str, ReviewerProfile], k1: float, b: float):
    paper_index = Bm25Index.from_texts({pid: p.text for pid, p in corpus.papers.items()}, k1=k1, b=b)
    profile_index = Bm25Index.from_texts({aid: p.text for aid, p in profiles.items()}, k1=k1, b=b)
    return paper_index, profile_index


def embed_store(embedder: Embedder, texts: Mapping[str, str], instruction: str) -> EmbeddingStore:
    ids = sorted(texts)
    vectors = embed_texts(embedder, [texts[i] for i in ids], instruction)
    return EmbeddingStore.from_vectors(ids, vectors)


def build_stores(corpus: Corpus, profiles: Mapping[str, ReviewerProfile], embedder: Embedder):
    papers = embed_store(embedder, {pid: p.text for pid, p in corpus.papers.items()}, QUERY_INSTRUCTION)
    revs = embed_store(embedder, {aid: p.text for aid, p in profiles.items()}, REVIEWER_INSTRUCTION)
    return papers, revs


def save_index_dir(path, paper_index, profile_index, paper_store, profile_store, meta=None) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    paper_index.save(path / PAPER_INDEX, meta)
    profile_index.save(path / PROFILE_INDEX, meta)
    paper_store.save(path / PAPER_VECTORS)
    profile_store.save(path / PROFILE_VECTORS)


def load_index_dir(path):
    path = Path(path)
    for name in (PAPER_INDEX, PROFILE_INDEX, PAPER_VECTORS, PROFILE_VECTORS):
        if not (path / name).is_file():
            raise DataError(f"index directory {path} lacks {name}")
    return (Bm25Index.load(path / PAPER_INDEX), Bm25Index.load(path / PROFILE_INDEX),
            EmbeddingStore.load(path / PAPER_VECTORS), EmbeddingStore.load(path / PROFILE_VECTORS))


def training_embeddings(paper_store: EmbeddingStore, profile_store: EmbeddingStore) -> dict[str, np.ndarray]:
    emb = {f"paper:{pid}": paper_store.get(pid) for pid in paper_store.ids}
    emb.update({f"reviewer:{aid}": profile_store.get(aid) for aid in profile_store.ids})
    return emb


@dataclass
class ScoringContext:
    corpus: Corpus
    profiles: Mapping[str, ReviewerProfile]
    paper_index: Bm25Index
    profile_index: Bm25Index
    paper_store: EmbeddingStore
    profile_store: EmbeddingStore
    embedder: Embedder
    window: tuple[date, date]
    model: AdapterModel | None = None

    def query_vector(self, paper: Paper) -> np.ndarray:
        if paper.id in self.paper_store:
            return self.paper_store.get(paper.id)
        return embed_texts(self.embedder, [paper.text], QUERY_INSTRUCTION)[0]

    def publications(self, reviewer_id: str) -> list[Paper]:
        author = self.corpus.authors.get(reviewer_id)
        if author is None:
            raise DataError(f"unknown reviewer {reviewer_id}")
        return papers_in_window(author, self.corpus.papers, self.window)

    def score(self, kind: str, paper: Paper, reviewer_ids: Iterable[str]) -> dict[str, float]:
        """Scores of ``reviewer_ids`` for one query paper under scorer ``kind``."""
        reviewer_ids = sorted(set(reviewer_ids))
        if kind in ("trained-adapter", "profile-cosine"):
            if kind == "trained-adapter" and self.model is None:
                raise DataError("trained-adapter scorer needs a model checkpoint")
            q = self.query_vector(paper)
            rows = []
            for r in reviewer_ids:
                if r not in self.profile_store:
                    raise ColdStartError(f"reviewer {r} has no profile embedding")
                rows.append(self.profile_store.get(r))
            if not rows:
                return {}
            M = np.vstack([q[None, :], np.stack(rows)])
            H = self.model.transform(M) if kind == "trained-adapter" else M / np.linalg.norm(M, axis=1, keepdims=True)
            return {r: float(s) for r, s in zip(reviewer_ids, H[1:] @ H[0])}
        if kind == "bm25":
            tokens = tokenize(paper.text)
            return {r: self.profile_index.score(tokens, r) for r in reviewer_ids}
        if kind == "tfidf":
            return {
                r: tfidf_cosine(self.paper_index, paper.text, " ".join(p.text for p in self.publications(r)))
                for r in reviewer_ids
            }
        if kind.startswith("pooled-baseline:"):
            strategy = kind.split(":", 1)[1]
            store = self.paper_store
            if paper.id not in store:
                store = store.copy()
                store.add(paper.id, self.query_vector(paper))
            out = {}
            for r in reviewer_ids:
                pubs = [p.id for p in self.publications(r) if p.id != paper.id]
                out[r] = baseline_reviewer_score(store, paper.id, pubs, strategy)
            return out
        raise ValueError(f"unknown scorer {kind!r}; choose from {', '.join(SCORERS)}")


def score_benchmark(ctx: ScoringContext, kind: str, records: Sequence, query_papers: Mapping[str, Paper]):
    """(paper_id, reviewer_id) -> score for every rated pair."""
    wanted: dict[str, set[str]] = {}
    for rec in records:
        wanted.setdefault(rec.paper_id, set()).add(rec.reviewer_id)
    scores = {}
    for pid in sorted(wanted):
        paper = query_papers.get(pid) or ctx.corpus.papers.get(pid)
        if paper is None:
            raise DataError(f"no text for benchmark paper {pid}")
        for r, s in ctx.score(kind, paper, wanted[pid]).items():
            scores[(pid, r)] = s
    return scores

