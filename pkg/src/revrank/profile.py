"""Keyword profiles of reviewers.

Every paper in the reviewer's window contributes its extracted keywords;
duplicates are kept so that recurring terms carry more weight. The bag is
then written out as one sentence, most frequent keywords first.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from datetime import date
from typing import Iterable, Mapping

from .clients import KeywordExtractor, KeywordRequest
from .corpus import Author, Paper, papers_in_window
from .errors import ColdStartError, ContractError, KeywordExtractionError

PREFIX = "The reviewer’s research keywords include: "
MAX_KEYWORD_TOKENS = 512
DEFAULT_N_KEYWORDS = 5


@dataclass(frozen=True)
class KeywordBag:
    entries: tuple[tuple[str, int], ...]
    provenance: Mapping[str, frozenset[str]] = field(default_factory=dict)

    @classmethod
    def from_lists(cls, keyword_lists: Mapping[str, Iterable[str]]) -> "KeywordBag":
        """Build from ``{paper_id: keywords}``; order of papers is irrelevant."""
        counts: Counter = Counter()
        provenance: dict[str, set[str]] = {}
        for paper_id, keywords in keyword_lists.items():
            for kw in keywords:
                kw = kw.strip().lower()
                if not kw:
                    continue
                counts[kw] += 1
                provenance.setdefault(kw, set()).add(paper_id)
        entries = tuple(sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])))
        return cls(entries, {k: frozenset(v) for k, v in provenance.items()})

    def count(self, keyword: str) -> int:
        return dict(self.entries).get(keyword.lower(), 0)

    @property
    def total(self) -> int:
        return sum(c for _, c in self.entries)

    def expansion(self, cap: int | None = MAX_KEYWORD_TOKENS) -> list[str]:
        out = [kw for kw, c in self.entries for _ in range(c)]
        return out if cap is None else out[:cap]


def linearize(bag: KeywordBag, cap: int | None = MAX_KEYWORD_TOKENS) -> str:
    return PREFIX + ", ".join(bag.expansion(cap))


@dataclass(frozen=True)
class ReviewerProfile:
    author_id: str
    bag: KeywordBag
    text: str
    window: tuple[date, date]

    def to_json(self) -> dict:
        return {
            "author_id": self.author_id,
            "entries": [[kw, c] for kw, c in self.bag.entries],
            "text": self.text,
            "window": [self.window[0].isoformat(), self.window[1].isoformat()],
            "provenance": {k: sorted(v) for k, v in sorted(self.bag.provenance.items())},
        }

    @classmethod
    def from_json(cls, row: Mapping) -> "ReviewerProfile":
        bag = KeywordBag(
            tuple((kw, int(c)) for kw, c in row["entries"]),
            {k: frozenset(v) for k, v in row.get("provenance", {}).items()},
        )
        start, end = row["window"]
        return cls(row["author_id"], bag, row["text"], (date.fromisoformat(start), date.fromisoformat(end)))


def profile_reviewer(
    author: Author,
    papers_by_id: Mapping[str, Paper],
    keyword_client: KeywordExtractor,
    n_keywords: int = DEFAULT_N_KEYWORDS,
    window: tuple[date, date] | None = None,
    cap: int | None = MAX_KEYWORD_TOKENS,
) -> ReviewerProfile:
    """Profile one author from their papers inside ``window``.

    Raises ColdStartError if no paper falls in the window. A keyword client
    contract failure is re-raised as KeywordExtractionError naming the paper.
    """
    if n_keywords < 1:
        raise ValueError("n_keywords must be positive")
    if window is None:
        window = (date.min, date.max)
    papers = papers_in_window(author, papers_by_id, window)
    if not papers:
        raise ColdStartError(f"author {author.author_id} has no papers in {window[0]}..{window[1]}")
    lists = {}
    for paper in papers:
        try:
            resp = keyword_client.extract(KeywordRequest(paper.title, paper.abstract, n_keywords))
        except ContractError as exc:
            raise KeywordExtractionError(paper.id, exc) from exc
        lists[paper.id] = resp.keywords
    bag = KeywordBag.from_lists(lists)
    return ReviewerProfile(author.author_id, bag, linearize(bag, cap), window)
