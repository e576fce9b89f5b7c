"""Paper/author metadata ingestion, author disambiguation and the
co-authorship graph used for conflict-of-interest checks."""

from __future__ import annotations

import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import date
from typing import Iterable, Iterator, Mapping, Protocol

from .errors import CorpusIntegrityError, DataError, VerifierUnavailable

log = logging.getLogger(__name__)

SUBAREAS = ("AI", "CL", "CV", "IR", "LG", "OTHER")


@dataclass(frozen=True)
class Paper:
    id: str
    title: str
    abstract: str
    author_mention_ids: tuple[str, ...]
    last_revised: date
    subarea: str = "OTHER"

    @property
    def text(self) -> str:
        """Title and abstract joined by one space; what gets embedded and indexed."""
        return f"{self.title} {self.abstract}"


@dataclass(frozen=True)
class AuthorMention:
    mention_id: str
    name: str
    paper_id: str
    email: str | None = None
    affiliation: str | None = None

    @property
    def name_key(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class Author:
    author_id: str
    mention_ids: frozenset[str]
    canonical_name: str
    paper_ids: frozenset[str]


@dataclass
class Reject:
    index: int
    record_id: str | None
    reason: str


@dataclass
class IngestResult:
    papers: list[Paper]
    mentions: list[AuthorMention]
    rejected: list[Reject] = field(default_factory=list)
    superseded: int = 0

    @property
    def reject_count(self) -> int:
        return len(self.rejected)


# -- normalization -----------------------------------------------------------


def normalize_space(value) -> str:
    if value is None:
        return ""
    if not isinstance(value, str):
        raise TypeError(f"expected text, got {type(value).__name__}")
    return " ".join(value.split())


def normalize_email(value) -> str | None:
    text = normalize_space(value).lower()
    return text or None


def normalize_subarea(value) -> str:
    if not value:
        return "OTHER"
    tag = str(value).strip().upper()
    if tag.startswith("CS."):
        tag = tag[3:]
    return tag if tag in SUBAREAS else "OTHER"


def parse_date(value) -> date:
    if isinstance(value, date):
        return value
    if not isinstance(value, str) or len(value) < 10:
        raise ValueError(f"unparseable date {value!r}")
    return date.fromisoformat(value[:10])


class _Rejected(Exception):
    def __init__(self, reason):
        super().__init__(reason)
        self.reason = reason


def _decode(raw):
    if isinstance(raw, (str, bytes)):
        try:
            return json.loads(raw)
        except ValueError:
            raise _Rejected("malformed_json")
    return raw


def _parse_record(raw) -> tuple[Paper, list[AuthorMention]]:
    if not isinstance(raw, dict):
        raise _Rejected("malformed_record")
    try:
        paper_id = raw["id"]
        if not isinstance(paper_id, (str, int)) or isinstance(paper_id, bool) or str(paper_id).strip() == "":
            raise _Rejected("malformed_id")
        paper_id = str(paper_id).strip()
        title = normalize_space(raw.get("title"))
        abstract = normalize_space(raw.get("abstract"))
        authors = raw.get("authors") or []
        if not isinstance(authors, list) or not all(isinstance(a, dict) for a in authors):
            raise _Rejected("malformed_authors")
        names = [normalize_space(a.get("name")) for a in authors]
        emails = [normalize_email(a.get("email")) for a in authors]
        affiliations = [normalize_space(a.get("affiliation")) or None for a in authors]
        revised = parse_date(raw.get("last_revised"))
    except _Rejected:
        raise
    except KeyError:
        raise _Rejected("missing_id")
    except (TypeError, ValueError):
        raise _Rejected("malformed_field")
    if not title:
        raise _Rejected("missing_title")
    if not abstract:
        raise _Rejected("missing_abstract")
    if not names or not all(names):
        raise _Rejected("missing_authors")
    mentions = [
        AuthorMention(f"{paper_id}#{i}", name, paper_id, email, aff)
        for i, (name, email, aff) in enumerate(zip(names, emails, affiliations))
    ]
    paper = Paper(
        id=paper_id,
        title=title,
        abstract=abstract,
        author_mention_ids=tuple(m.mention_id for m in mentions),
        last_revised=revised,
        subarea=normalize_subarea(raw.get("subarea")),
    )
    return paper, mentions


def ingest_papers(records: Iterable) -> IngestResult:
    """Normalize raw metadata records.

    Records may be dicts or undecoded JSON lines. Defective records are
    rejected with a reason code and never stop the stream. For a repeated
    paper id the latest ``last_revised`` wins (later record on equal dates).
    """
    kept: dict[str, tuple[Paper, list[AuthorMention]]] = {}
    rejected: list[Reject] = []
    superseded = 0
    for index, raw in enumerate(records):
        try:
            raw = _decode(raw)
            paper, mentions = _parse_record(raw)
        except _Rejected as exc:
            record_id = raw.get("id") if isinstance(raw, dict) else None
            rejected.append(Reject(index, None if record_id is None else str(record_id), exc.reason))
            continue
        previous = kept.get(paper.id)
        if previous is not None:
            superseded += 1
            if previous[0].last_revised > paper.last_revised:
                continue
        kept[paper.id] = (paper, mentions)
    papers = [p for p, _ in kept.values()]
    mentions = [m for _, ms in kept.values() for m in ms]
    if rejected:
        log.info("ingest rejected %d record(s)", len(rejected))
    return IngestResult(papers, mentions, rejected, superseded)


def read_jsonl_lines(path) -> Iterator[str]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield line


# -- disambiguation ----------------------------------------------------------


class SemanticVerifier(Protocol):
    def verify(self, a: AuthorMention, b: AuthorMention) -> bool:
        """True when both mentions denote the same person."""


class _UnionFind:
    """Union-find that refuses to join two sets carrying different emails."""

    def __init__(self, mentions: Iterable[AuthorMention]):
        self.parent: dict[str, str] = {}
        self.emails: dict[str, set[str]] = {}
        for m in mentions:
            self.parent[m.mention_id] = m.mention_id
            self.emails[m.mention_id] = {m.email} if m.email else set()

    def find(self, x: str) -> str:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def compatible(self, a: str, b: str) -> bool:
        return len(self.emails[self.find(a)] | self.emails[self.find(b)]) <= 1

    def union(self, a: str, b: str) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return True
        if not self.compatible(ra, rb):
            return False
        if rb < ra:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.emails[ra] |= self.emails.pop(rb)
        return True


def disambiguate_authors(
    mentions: Iterable[AuthorMention], verifier: SemanticVerifier | None = None
) -> list[Author]:
    """Group mentions into authors, most precise evidence first.

    1. identical non-empty email;
    2. same name (case-insensitive) and identical non-empty affiliation;
    3. same name, different non-empty affiliations, confirmed by ``verifier``.

    Mentions with neither email nor affiliation stay singletons, and no
    merge may put two different emails in one author. Work happens in
    mention-id order so the partition does not depend on input order.
    """
    ordered = sorted(mentions, key=lambda m: m.mention_id)
    uf = _UnionFind(ordered)

    by_email: dict[str, list[str]] = defaultdict(list)
    for m in ordered:
        if m.email:
            by_email[m.email].append(m.mention_id)
    for email in sorted(by_email):
        first, *rest = by_email[email]
        for other in rest:
            uf.union(first, other)

    by_name_aff: dict[tuple[str, str], list[str]] = defaultdict(list)
    by_name: dict[str, list[AuthorMention]] = defaultdict(list)
    for m in ordered:
        if m.affiliation:
            by_name_aff[(m.name_key, m.affiliation)].append(m.mention_id)
            by_name[m.name_key].append(m)
    for key in sorted(by_name_aff):
        first, *rest = by_name_aff[key]
        for other in rest:
            uf.union(first, other)

    if verifier is not None:
        for name in sorted(by_name):
            group = by_name[name]
            for i, a in enumerate(group):
                for b in group[i + 1:]:
                    if a.affiliation == b.affiliation:
                        continue
                    if uf.find(a.mention_id) == uf.find(b.mention_id):
                        continue
                    if not uf.compatible(a.mention_id, b.mention_id):
                        continue
                    try:
                        same = verifier.verify(a, b)
                    except VerifierUnavailable as exc:
                        log.warning("verifier unavailable for %s / %s, not merging: %s",
                                    a.mention_id, b.mention_id, exc)
                        continue
                    if same:
                        uf.union(a.mention_id, b.mention_id)

    groups: dict[str, list[AuthorMention]] = defaultdict(list)
    for m in ordered:
        groups[uf.find(m.mention_id)].append(m)
    authors = []
    for root in sorted(groups):
        members = groups[root]
        names = Counter(m.name for m in members)
        canonical = min(names, key=lambda n: (-names[n], n))
        authors.append(Author(
            author_id=f"au_{root}",
            mention_ids=frozenset(m.mention_id for m in members),
            canonical_name=canonical,
            paper_ids=frozenset(m.paper_id for m in members),
        ))
    return authors


# -- co-authorship -----------------------------------------------------------


class CoauthorGraph:
    """Undirected, irreflexive co-authorship relation."""

    def __init__(self, nodes: Iterable[str] = ()):
        self.adjacency: dict[str, set[str]] = {n: set() for n in nodes}

    def add_node(self, a: str) -> None:
        self.adjacency.setdefault(a, set())

    def add_edge(self, a: str, b: str) -> None:
        if a == b:
            return
        self.adjacency.setdefault(a, set()).add(b)
        self.adjacency.setdefault(b, set()).add(a)

    def add_paper(self, author_ids: Iterable[str]) -> None:
        ids = sorted(set(author_ids))
        for a in ids:
            self.add_node(a)
        for i, a in enumerate(ids):
            for b in ids[i + 1:]:
                self.add_edge(a, b)

    def neighbors(self, a: str) -> set[str]:
        return self.adjacency.get(a, set())

    def has_edge(self, a: str, b: str) -> bool:
        return b in self.adjacency.get(a, ())

    def __contains__(self, a) -> bool:
        return a in self.adjacency

    def edges(self) -> set[tuple[str, str]]:
        return {(a, b) for a, nbrs in self.adjacency.items() for b in nbrs if a < b}


def mention_index(authors: Iterable[Author]) -> dict[str, str]:
    """mention id -> author id"""
    return {mid: a.author_id for a in authors for mid in a.mention_ids}


def build_coauthor_graph(authors: Iterable[Author], papers: Iterable[Paper]) -> CoauthorGraph:
    authors = list(authors)
    owner = mention_index(authors)
    graph = CoauthorGraph(a.author_id for a in authors)
    for paper in papers:
        try:
            ids = [owner[mid] for mid in paper.author_mention_ids]
        except KeyError as exc:
            raise CorpusIntegrityError(
                f"paper {paper.id}: mention {exc.args[0]} not resolved to any author") from None
        graph.add_paper(ids)
    return graph


# -- corpus bundle and persistence -------------------------------------------


class Corpus:
    """Papers, resolved authors and the co-author graph; read-only after load."""

    def __init__(self, papers: Iterable[Paper], authors: Iterable[Author]):
        self.papers: dict[str, Paper] = {p.id: p for p in papers}
        self.authors: dict[str, Author] = {a.author_id: a for a in authors}
        self.mention_owner = mention_index(self.authors.values())
        self.graph = build_coauthor_graph(self.authors.values(), self.papers.values())
        self._paper_authors = {
            p.id: frozenset(self.mention_owner[m] for m in p.author_mention_ids)
            for p in self.papers.values()
        }

    def paper_authors(self, paper_id: str) -> frozenset[str]:
        return self._paper_authors[paper_id]

    def max_revised(self) -> date:
        return max(p.last_revised for p in self.papers.values())


def two_year_window(reference: date) -> tuple[date, date]:
    try:
        start = reference.replace(year=reference.year - 2)
    except ValueError:  # Feb 29
        start = reference.replace(year=reference.year - 2, day=28)
    return start, reference


def papers_in_window(author: Author, papers: Mapping[str, Paper], window: tuple[date, date]) -> list[Paper]:
    start, end = window
    found = [papers[pid] for pid in author.paper_ids if pid in papers]
    return sorted((p for p in found if start <= p.last_revised <= end), key=lambda p: p.id)


def paper_to_json(paper: Paper, mentions: Mapping[str, AuthorMention]) -> dict:
    return {
        "id": paper.id,
        "title": paper.title,
        "abstract": paper.abstract,
        "authors": [
            {
                "mention_id": mid,
                "name": mentions[mid].name,
                "email": mentions[mid].email,
                "affiliation": mentions[mid].affiliation,
            }
            for mid in paper.author_mention_ids
        ],
        "last_revised": paper.last_revised.isoformat(),
        "subarea": paper.subarea,
    }


def load_normalized_papers(path) -> tuple[list[Paper], list[AuthorMention]]:
    """Read papers written by ``paper_to_json`` (mention ids preserved)."""
    papers, mentions = [], []
    for line in read_jsonl_lines(path):
        row = json.loads(line)
        if "_meta" in row:
            continue
        try:
            ms = [
                AuthorMention(a["mention_id"], a["name"], row["id"], a.get("email"), a.get("affiliation"))
                for a in row["authors"]
            ]
            papers.append(Paper(
                id=row["id"],
                title=row["title"],
                abstract=row["abstract"],
                author_mention_ids=tuple(m.mention_id for m in ms),
                last_revised=parse_date(row["last_revised"]),
                subarea=row.get("subarea", "OTHER"),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: bad normalized paper row: {exc}") from None
        mentions.extend(ms)
    return papers, mentions


def author_to_json(author: Author) -> dict:
    return {
        "author_id": author.author_id,
        "canonical_name": author.canonical_name,
        "mention_ids": sorted(author.mention_ids),
        "paper_ids": sorted(author.paper_ids),
    }


def author_from_json(row: Mapping) -> Author:
    return Author(
        author_id=row["author_id"],
        mention_ids=frozenset(row["mention_ids"]),
        canonical_name=row["canonical_name"],
        paper_ids=frozenset(row["paper_ids"]),
    )
