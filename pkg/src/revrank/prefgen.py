"""Annotation-free preference triplets from BM25 rankings.

For an anchor (a paper or a reviewer profile) the BM25 top candidate is the
positive. Negatives are the candidates whose scores sit closest to one third
(hard) and one tenth (easy) of the positive score.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .coi import conflicted
from .corpus import Corpus
from .errors import DataError
from .jsonl import read_jsonl, write_jsonl
from .lexical import Bm25Index, tokenize
from .profile import ReviewerProfile

log = logging.getLogger(__name__)

PAPER_CENTRIC = "paper_centric"
REVIEWER_CENTRIC = "reviewer_centric"
VIEWS = (PAPER_CENTRIC, REVIEWER_CENTRIC)

HARD_RATIO = 1 / 3
EASY_RATIO = 1 / 10
MIN_SCORED = 3


@dataclass(frozen=True)
class PreferenceTriplet:
    anchor_id: str
    view: str
    positive_id: str
    negative_id: str
    difficulty: str
    positive_score: float
    negative_score: float

    def keys(self) -> tuple[str, str, str]:
        """Namespaced embedding keys for anchor, positive and negative."""
        if self.view == PAPER_CENTRIC:
            a, c = "paper", "reviewer"
        else:
            a, c = "reviewer", "paper"
        return f"{a}:{self.anchor_id}", f"{c}:{self.positive_id}", f"{c}:{self.negative_id}"

    def to_json(self) -> dict:
        return {
            "anchor_id": self.anchor_id,
            "view": self.view,
            "positive_id": self.positive_id,
            "negative_id": self.negative_id,
            "difficulty": self.difficulty,
            "s_pos": self.positive_score,
            "s_neg": self.negative_score,
        }

    @classmethod
    def from_json(cls, row: Mapping) -> "PreferenceTriplet":
        if row["view"] not in VIEWS or row["difficulty"] not in ("easy", "hard"):
            raise DataError(f"bad triplet row {row!r}")
        return cls(row["anchor_id"], row["view"], row["positive_id"], row["negative_id"],
                   row["difficulty"], float(row["s_pos"]), float(row["s_neg"]))


def _nearest(pool: Sequence[tuple[str, float]], target: float) -> tuple[str, float]:
    return min(pool, key=lambda item: (abs(item[1] - target), item[0]))


def select_triplets(anchor_id: str, view: str, scored: Iterable[tuple[str, float]]) -> list[PreferenceTriplet]:
    """Pick positive and negatives from ``(candidate_id, bm25_score)`` pairs.

    Needs at least three positively scored candidates. Candidates tied with
    the positive are never used as negatives. When the easy and hard picks
    coincide only the hard triplet is kept.
    """
    positive = sorted(((c, s) for c, s in scored if s > 0 and c != anchor_id), key=lambda x: (-x[1], x[0]))
    if len(positive) < MIN_SCORED:
        return []
    top_id, top_score = positive[0]
    pool = [(c, s) for c, s in positive[1:] if s < top_score]
    if not pool:
        return []
    hard = _nearest(pool, top_score * HARD_RATIO)
    easy = _nearest(pool, top_score * EASY_RATIO)
    out = [PreferenceTriplet(anchor_id, view, top_id, hard[0], "hard", top_score, hard[1])]
    if easy[0] != hard[0]:
        out.append(PreferenceTriplet(anchor_id, view, top_id, easy[0], "easy", top_score, easy[1]))
    return out


def build_triplets(
    anchor_id: str,
    view: str,
    anchor_text: str,
    candidates: Iterable[str],
    index: Bm25Index,
    excluded: Iterable[str] = (),
) -> list[PreferenceTriplet]:
    """Rank candidates by BM25 against the anchor text and select triplets.

    ``index`` holds the candidate documents (profiles for the paper-centric
    view, papers for the reviewer-centric one).
    """
    if view not in VIEWS:
        raise ValueError(f"unknown view {view!r}")
    tokens = tokenize(anchor_text or "")
    if not tokens:
        raise DataError(f"anchor {anchor_id} has no usable text")
    skip = set(excluded) | {anchor_id}
    pool = sorted(c for c in set(candidates) if c not in skip)
    return select_triplets(anchor_id, view, index.rank(tokens, pool))


def generate_training_set(
    corpus: Corpus,
    profiles: Mapping[str, ReviewerProfile],
    paper_index: Bm25Index,
    profile_index: Bm25Index,
    sample_budget: int,
    seed: int,
    holdout: Iterable[str] = (),
    candidate_pools: Mapping[str, Iterable[str]] | None = None,
) -> list[PreferenceTriplet]:
    """Sample anchors, alternating views, until ``sample_budget`` triplets exist.

    Paper anchors compete over reviewer profiles (optionally restricted by
    ``candidate_pools``); reviewer anchors compete over corpus papers.
    Conflicted pairs are removed in both views and held-out papers never
    appear in any triplet.
    """
    if sample_budget <= 0:
        return []
    holdout = set(holdout)
    rng = random.Random(seed)

    paper_anchors = sorted(p for p in corpus.papers if p not in holdout and p in paper_index)
    reviewer_anchors = sorted(a for a in profiles if a in profile_index)
    rng.shuffle(paper_anchors)
    rng.shuffle(reviewer_anchors)

    all_reviewers = sorted(reviewer_anchors)
    eligible_papers = sorted(p for p in paper_index.doc_ids if p not in holdout)

    def paper_view(pid: str) -> list[PreferenceTriplet]:
        blocked = conflicted(corpus.paper_authors(pid), corpus.graph)
        pool = all_reviewers if candidate_pools is None else candidate_pools.get(pid, ())
        cands = [r for r in pool if r in profile_index]
        return build_triplets(pid, PAPER_CENTRIC, corpus.papers[pid].text, cands, profile_index, blocked)

    def reviewer_view(aid: str) -> list[PreferenceTriplet]:
        blocked = set()
        for other in conflicted({aid}, corpus.graph):
            author = corpus.authors.get(other)
            if author is not None:
                blocked |= author.paper_ids
        return build_triplets(aid, REVIEWER_CENTRIC, profiles[aid].text, eligible_papers, paper_index,
                              blocked | holdout)

    queues = [(paper_view, paper_anchors), (reviewer_view, reviewer_anchors)]
    cursors = [0, 0]
    out: list[PreferenceTriplet] = []
    turn = 0
    while len(out) < sample_budget:
        if all(cursors[i] >= len(queues[i][1]) for i in (0, 1)):
            break
        if cursors[turn] < len(queues[turn][1]):
            fn, anchors = queues[turn]
            anchor = anchors[cursors[turn]]
            cursors[turn] += 1
            out.extend(fn(anchor))
        turn = 1 - turn
    if len(out) < sample_budget:
        log.warning("triplet budget %d not reached: %d short", sample_budget, sample_budget - len(out))
    return out[:sample_budget]


def save_triplets(path, triplets: Iterable[PreferenceTriplet], meta: Mapping | None = None) -> int:
    return write_jsonl(path, (t.to_json() for t in triplets), meta)


def load_triplets(path) -> list[PreferenceTriplet]:
    try:
        return [PreferenceTriplet.from_json(row) for row in read_jsonl(path)]
    except KeyError as exc:
        raise DataError(f"{path}: triplet row missing {exc}") from None
