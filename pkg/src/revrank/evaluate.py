"""Rated benchmarks, preference pairs and the pairwise ranking metrics."""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .errors import DataError, EmptyInputError, MissingScoreError
from .jsonl import read_jsonl

PAPER_CENTRIC = "paper_centric"
REVIEWER_CENTRIC = "reviewer_centric"
VIEWS = (PAPER_CENTRIC, REVIEWER_CENTRIC)


@dataclass(frozen=True)
class BenchmarkRecord:
    paper_id: str
    reviewer_id: str
    rating: int


@dataclass(frozen=True)
class PreferencePair:
    anchor_id: str
    preferred_id: str
    other_id: str
    weight: int
    view: str

    def score_keys(self) -> tuple[tuple[str, str], tuple[str, str]]:
        """(paper, reviewer) keys of the preferred and the other item."""
        if self.view == PAPER_CENTRIC:
            return (self.anchor_id, self.preferred_id), (self.anchor_id, self.other_id)
        return (self.preferred_id, self.anchor_id), (self.other_id, self.anchor_id)


def dedup_records(records: Iterable[BenchmarkRecord]) -> list[BenchmarkRecord]:
    """Keep the last rating seen for each (paper, reviewer)."""
    latest: dict[tuple[str, str], BenchmarkRecord] = {}
    for rec in records:
        latest.pop((rec.paper_id, rec.reviewer_id), None)
        latest[(rec.paper_id, rec.reviewer_id)] = rec
    return list(latest.values())


def load_benchmark(path, papers_path=None, scale_max: int = 5) -> list[BenchmarkRecord]:
    """Read ``{"paper_id", "reviewer_id", "rating"}`` rows.

    Ratings must be integers in ``1..scale_max``. When a sidecar papers file
    is given every rated paper must appear in it.
    """
    records = []
    for row in read_jsonl(path):
        try:
            rating = row["rating"]
            rec = BenchmarkRecord(str(row["paper_id"]), str(row["reviewer_id"]), rating)
        except KeyError as exc:
            raise DataError(f"{path}: record missing {exc}") from None
        if isinstance(rating, bool) or not isinstance(rating, int) or not 1 <= rating <= scale_max:
            raise DataError(f"{path}: rating {rating!r} outside 1..{scale_max}")
        records.append(rec)
    records = dedup_records(records)
    if papers_path is not None:
        known = {str(row["id"]) for row in read_jsonl(papers_path)}
        missing = sorted({r.paper_id for r in records} - known)
        if missing:
            raise DataError(f"{path}: papers not in {papers_path}: {missing[:5]}")
    return records


def derive_pairs(records: Iterable[BenchmarkRecord], view: str) -> list[PreferencePair]:
    """One pair per differently-rated couple within each group; ties dropped."""
    if view not in VIEWS:
        raise ValueError(f"unknown view {view!r}")
    groups: dict[str, list[tuple[str, int]]] = defaultdict(list)
    for r in records:
        if view == PAPER_CENTRIC:
            groups[r.paper_id].append((r.reviewer_id, r.rating))
        else:
            groups[r.reviewer_id].append((r.paper_id, r.rating))
    pairs = []
    for anchor in sorted(groups):
        items = sorted(groups[anchor])
        for i, (x, rx) in enumerate(items):
            for y, ry in items[i + 1:]:
                if rx == ry:
                    continue
                hi, lo = (x, y) if rx > ry else (y, x)
                pairs.append(PreferencePair(anchor, hi, lo, abs(rx - ry), view))
    return pairs


def _scored(pairs: Sequence[PreferencePair], scores: Mapping[tuple[str, str], float]):
    if not pairs:
        raise EmptyInputError("no preference pairs to evaluate")
    for p in pairs:
        kp, ko = p.score_keys()
        for key in (kp, ko):
            if key not in scores:
                raise MissingScoreError(p, key)
        yield p, scores[kp], scores[ko]


def ranking_loss(pairs: Sequence[PreferencePair], scores: Mapping[tuple[str, str], float]) -> float:
    """Weight of misordered pairs over total weight. Equal scores cost nothing."""
    wrong = total = 0
    for p, s_pref, s_other in _scored(pairs, scores):
        total += p.weight
        if s_pref < s_other:
            wrong += p.weight
    return wrong / total


def precision(pairs: Sequence[PreferencePair], scores: Mapping[tuple[str, str], float]) -> float:
    """Share of pairs ordered strictly correctly; ties count as wrong."""
    hits = n = 0
    for _, s_pref, s_other in _scored(pairs, scores):
        n += 1
        hits += s_pref > s_other
    return hits / n


def _histogram(values: Iterable[int], buckets: int) -> dict[int, int]:
    counts = Counter(values)
    top = max([buckets, *counts]) if counts else buckets
    return {k: counts.get(k, 0) for k in range(1, top + 1)}


def _with_percent(hist: Mapping[int, int]) -> dict:
    total = sum(hist.values())
    return {
        "total": total,
        "counts": dict(hist),
        "percent": {k: (100.0 * v / total if total else 0.0) for k, v in hist.items()},
    }


def benchmark_stats(records: Sequence[BenchmarkRecord], scale_max: int = 5, load_buckets: int = 6) -> dict:
    """Rating distribution plus papers-per-annotator and annotators-per-paper."""
    per_annotator = Counter(r.reviewer_id for r in records)
    per_paper = Counter(r.paper_id for r in records)
    return {
        "records": len(records),
        "rating": _with_percent({k: sum(1 for r in records if r.rating == k) for k in range(1, scale_max + 1)}),
        "papers_per_annotator": _with_percent(_histogram(per_annotator.values(), load_buckets)),
        "annotators_per_paper": _with_percent(_histogram(per_paper.values(), load_buckets)),
        "annotators": len(per_annotator),
        "papers": len(per_paper),
        "pairs": {v: len(derive_pairs(records, v)) for v in VIEWS},
    }


def evaluate_scores(records: Sequence[BenchmarkRecord], scores: Mapping[tuple[str, str], float]) -> dict:
    """Loss and precision per view and over all pairs pooled."""
    report: dict = {"views": {}}
    everything = []
    for view in VIEWS:
        pairs = derive_pairs(records, view)
        everything.extend(pairs)
        if pairs:
            report["views"][view] = {"pairs": len(pairs), "loss": ranking_loss(pairs, scores),
                                     "precision": precision(pairs, scores)}
        else:
            report["views"][view] = {"pairs": 0, "loss": None, "precision": None}
    report["all"] = {
        "pairs": len(everything),
        "loss": ranking_loss(everything, scores) if everything else None,
        "precision": precision(everything, scores) if everything else None,
    }
    return report


def report_tsv(report: Mapping) -> str:
    lines = ["view\tpairs\tloss\tprecision"]
    rows = [*report["views"].items(), ("all", report["all"])]
    for name, row in rows:
        fmt = lambda v: "" if v is None else repr(v)
        lines.append(f"{name}\t{row['pairs']}\t{fmt(row['loss'])}\t{fmt(row['precision'])}")
    return "\n".join(lines) + "\n"
