"""Tokenizer, Okapi BM25 inverted index and a TF-IDF cosine baseline."""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import DataError, UnknownDocument

_TOKEN_RE = re.compile(r"[^\W_]+")

INDEX_FORMAT = "revrank-bm25"
INDEX_VERSION = 1


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumeric runs, drop 1-character tokens.

    >>> tokenize("Graph-based RAG!")
    ['graph', 'based', 'rag']
    """
    return [t for t in _TOKEN_RE.findall(text.lower()) if len(t) >= 2]


class Bm25Index:
    """Inverted index over a fixed document set.

    Immutable once built; safe to share between readers.
    """

    def __init__(self, docs: Mapping[str, Sequence[str]], k1: float = 1.2, b: float = 0.75):
        if k1 < 0 or not 0 <= b <= 1:
            raise ValueError(f"bad BM25 parameters k1={k1} b={b}")
        self.k1 = float(k1)
        self.b = float(b)
        self.postings: dict[str, dict[str, int]] = {}
        self.doc_lengths: dict[str, int] = {}
        for doc_id in sorted(docs):
            tokens = docs[doc_id]
            self.doc_lengths[doc_id] = len(tokens)
            for term, tf in sorted(Counter(tokens).items()):
                self.postings.setdefault(term, {})[doc_id] = tf
        self.doc_count = len(self.doc_lengths)
        total = sum(self.doc_lengths.values())
        self.avg_doc_length = total / self.doc_count if self.doc_count else 0.0

    @classmethod
    def from_texts(cls, texts: Mapping[str, str], **params) -> "Bm25Index":
        return cls({doc_id: tokenize(text) for doc_id, text in texts.items()}, **params)

    def __contains__(self, doc_id) -> bool:
        return doc_id in self.doc_lengths

    def __len__(self) -> int:
        return self.doc_count

    @property
    def doc_ids(self) -> list[str]:
        return list(self.doc_lengths)

    def df(self, term: str) -> int:
        return len(self.postings.get(term, ()))

    def idf(self, term: str) -> float:
        df = self.df(term)
        return math.log(1.0 + (self.doc_count - df + 0.5) / (df + 0.5))

    def _length_norm(self, doc_id: str) -> float:
        if self.avg_doc_length == 0:
            return 1.0
        return 1.0 - self.b + self.b * self.doc_lengths[doc_id] / self.avg_doc_length

    def score(self, query_tokens: Iterable[str], doc_id: str) -> float:
        if doc_id not in self.doc_lengths:
            raise UnknownDocument(doc_id)
        norm = self._length_norm(doc_id)
        total = 0.0
        for term in query_tokens:
            tf = self.postings.get(term, {}).get(doc_id, 0)
            if tf:
                total += self.idf(term) * tf * (self.k1 + 1) / (tf + self.k1 * norm)
        return total

    def scores(self, query_tokens: Iterable[str]) -> dict[str, float]:
        """Scores of every doc sharing at least one term with the query."""
        acc: dict[str, float] = {}
        for term in query_tokens:
            posting = self.postings.get(term)
            if not posting:
                continue
            idf = self.idf(term)
            for doc_id, tf in posting.items():
                part = idf * tf * (self.k1 + 1) / (tf + self.k1 * self._length_norm(doc_id))
                acc[doc_id] = acc.get(doc_id, 0.0) + part
        return acc

    def rank(self, query_tokens: Iterable[str], candidate_ids: Iterable[str]) -> list[tuple[str, float]]:
        """Candidates by descending score, ties by ascending id."""
        candidates = list(candidate_ids)
        for doc_id in candidates:
            if doc_id not in self.doc_lengths:
                raise UnknownDocument(doc_id)
        acc = self.scores(list(query_tokens))
        ranked = [(doc_id, acc.get(doc_id, 0.0)) for doc_id in candidates]
        ranked.sort(key=lambda item: (-item[1], item[0]))
        return ranked

    # -- persistence -------------------------------------------------------

    def to_json(self, meta: Mapping | None = None) -> str:
        payload = {
            "format": INDEX_FORMAT,
            "version": INDEX_VERSION,
            "meta": dict(meta or {}),
            "k1": self.k1,
            "b": self.b,
            "doc_lengths": self.doc_lengths,
            "postings": {t: sorted(p.items()) for t, p in self.postings.items()},
        }
        return json.dumps(payload, sort_keys=True, ensure_ascii=False)

    def save(self, path, meta: Mapping | None = None) -> None:
        Path(path).write_text(self.to_json(meta) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Bm25Index":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("format") != INDEX_FORMAT or payload.get("version") != INDEX_VERSION:
            raise DataError(f"{path}: not a version-{INDEX_VERSION} BM25 index")
        index = cls({}, k1=payload["k1"], b=payload["b"])
        index.doc_lengths = dict(payload["doc_lengths"])
        index.postings = {t: dict((d, tf) for d, tf in p) for t, p in payload["postings"].items()}
        index.doc_count = len(index.doc_lengths)
        total = sum(index.doc_lengths.values())
        index.avg_doc_length = total / index.doc_count if index.doc_count else 0.0
        return index


def bm25_score(index: Bm25Index, query_tokens: Iterable[str], doc_id: str) -> float:
    return index.score(query_tokens, doc_id)


def rank(index: Bm25Index, query_tokens: Iterable[str], candidate_ids: Iterable[str]) -> list[tuple[str, float]]:
    return index.rank(query_tokens, candidate_ids)


def tfidf_idf(index: Bm25Index, term: str) -> float:
    # smoothed idf, strictly positive for every in-vocabulary term
    return math.log((1 + index.doc_count) / (1 + index.df(term))) + 1.0


def tfidf_vector(index: Bm25Index, text: str) -> dict[str, float]:
    counts = Counter(t for t in tokenize(text) if t in index.postings)
    return {t: math.log1p(tf) * tfidf_idf(index, t) for t, tf in counts.items()}


def tfidf_cosine(index: Bm25Index, text_a: str, text_b: str) -> float:
    """Cosine of log-tf * idf vectors; idf comes from the index's corpus."""
    va = tfidf_vector(index, text_a)
    vb = tfidf_vector(index, text_b)
    if not va or not vb:
        return 0.0
    dot = sum(w * vb.get(t, 0.0) for t, w in va.items())
    na = math.sqrt(sum(w * w for w in va.values()))
    nb = math.sqrt(sum(w * w for w in vb.values()))
    return min(1.0, max(0.0, dot / (na * nb)))
