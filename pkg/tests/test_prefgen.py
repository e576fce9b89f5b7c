import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from revrank.coi import conflicted
from revrank.errors import DataError
from revrank.lexical import Bm25Index, tokenize
from revrank.prefgen import (
    PAPER_CENTRIC,
    REVIEWER_CENTRIC,
    PreferenceTriplet,
    build_triplets,
    generate_training_set,
    load_triplets,
    save_triplets,
    select_triplets,
)
from synthetic import build_world, make_planted_corpus


def test_worked_example():
    scored = [("d1", 9.0), ("d2", 3.1), ("d3", 0.8), ("d4", 0.2)]
    out = select_triplets("q", PAPER_CENTRIC, scored)
    assert [(t.positive_id, t.negative_id, t.difficulty) for t in out] == [("d1", "d2", "hard"), ("d1", "d3", "easy")]
    assert (out[0].positive_score, out[0].negative_score) == (9.0, 3.1)


def test_too_few_scored_candidates():
    assert select_triplets("q", PAPER_CENTRIC, [("a", 5.0), ("b", 1.0), ("c", 0.0)]) == []
    assert select_triplets("q", PAPER_CENTRIC, [("a", 0.0), ("b", 0.0), ("c", 0.0), ("d", 0.0)]) == []


def test_easy_and_hard_coincide():
    out = select_triplets("q", PAPER_CENTRIC, [("a", 9.0), ("b", 8.0), ("c", 7.0)])
    assert [(t.negative_id, t.difficulty) for t in out] == [("c", "hard")]


def test_nearest_ties_go_to_smaller_id():
    # hard target 3.0: b (3.5) and c (2.5) are equally close
    out = select_triplets("q", PAPER_CENTRIC, [("a", 9.0), ("c", 2.5), ("b", 3.5), ("d", 0.9)])
    assert out[0].negative_id == "b"


def test_candidates_tied_with_positive_are_not_negatives():
    out = select_triplets("q", PAPER_CENTRIC, [("a", 3.0), ("b", 3.0), ("c", 1.0), ("d", 0.3)])
    assert out[0].positive_id == "a"
    assert {t.negative_id for t in out} == {"c", "d"}
    for t in out:
        assert t.positive_score > t.negative_score > 0


def test_build_triplets_uses_bm25_and_exclusions():
    docs = {
        "r1": "graph graph graph retrieval ranking",
        "r2": "graph retrieval",
        "r3": "graph models and more words here",
        "r4": "unrelated text entirely",
        "r5": "graph graph graph retrieval ranking ranking",
    }
    idx = Bm25Index.from_texts(docs)
    out = build_triplets("q", PAPER_CENTRIC, "graph retrieval ranking", list(docs), idx, excluded={"r5"})
    scores = {d: idx.score(tokenize("graph retrieval ranking"), d) for d in docs}
    assert out[0].positive_id == max((d for d in docs if d != "r5"), key=scores.get)
    assert all("r5" not in (t.positive_id, t.negative_id) for t in out)
    with pytest.raises(DataError):
        build_triplets("q", PAPER_CENTRIC, " . ", list(docs), idx)
    with pytest.raises(ValueError):
        build_triplets("q", "sideways", "graph", list(docs), idx)


def test_triplet_json_round_trip(tmp_path):
    t = PreferenceTriplet("p1", REVIEWER_CENTRIC, "a", "b", "easy", 2.5, 0.25)
    assert PreferenceTriplet.from_json(t.to_json()) == t
    assert t.keys() == ("reviewer:p1", "paper:a", "paper:b")
    assert set(t.to_json()) == {"anchor_id", "view", "positive_id", "negative_id", "difficulty", "s_pos", "s_neg"}
    save_triplets(tmp_path / "t.jsonl", [t, t], meta={"seed": 1})
    assert load_triplets(tmp_path / "t.jsonl") == [t, t]


@settings(max_examples=300, deadline=None)
@given(st.dictionaries(st.text("abcdefgh", min_size=1, max_size=2),
                       st.one_of(st.just(0.0), st.floats(0.01, 20.0)), max_size=12))
def test_selection_matches_exhaustive_scan(scores):
    out = select_triplets("anchor", PAPER_CENTRIC, scores.items())
    positive = {c: s for c, s in scores.items() if s > 0}
    if len(positive) < 3:
        assert out == []
        return
    top = max(positive.values())
    for t in out:
        assert t.positive_score == top == scores[t.positive_id]
        assert t.positive_id == min(c for c, s in positive.items() if s == top)
        target = top / 3 if t.difficulty == "hard" else top / 10
        dist = abs(t.negative_score - target)
        for c, s in positive.items():
            if s < top:
                assert abs(s - target) > dist or (abs(s - target) == dist and c >= t.negative_id)
        assert t.positive_score > t.negative_score > 0
        assert t.negative_id != t.positive_id
    assert len({t.negative_id for t in out}) == len(out)


# -- training-set generation on a small planted corpus --------------------------------


@pytest.fixture(scope="module")
def world():
    return build_world(make_planted_corpus(
        n_topics=4, reviewers_per_topic=3, papers_per_reviewer=3, queries_per_topic=1, raters_per_query=6))


def test_budget_zero(world):
    assert generate_training_set(world.corpus, world.profiles, world.paper_index, world.profile_index, 0, 1) == []


def test_same_seed_same_output(world):
    args = (world.corpus, world.profiles, world.paper_index, world.profile_index, 20)
    a = generate_training_set(*args, seed=7, holdout=world.planted.holdout)
    b = generate_training_set(*args, seed=7, holdout=world.planted.holdout)
    assert a == b and len(a) == 20


def test_every_triplet_replays_from_its_anchor(world):
    holdout = world.planted.holdout
    out = generate_training_set(world.corpus, world.profiles, world.paper_index, world.profile_index,
                                20, seed=622, holdout=holdout)
    assert {t.view for t in out} == {PAPER_CENTRIC, REVIEWER_CENTRIC}
    for t in out:
        assert holdout.isdisjoint({t.anchor_id, t.positive_id, t.negative_id})
        if t.view == PAPER_CENTRIC:
            blocked = conflicted(world.corpus.paper_authors(t.anchor_id), world.corpus.graph)
            assert t.positive_id not in blocked and t.negative_id not in blocked
            replay = build_triplets(t.anchor_id, t.view, world.corpus.papers[t.anchor_id].text,
                                    sorted(world.profiles), world.profile_index, blocked)
        else:
            blocked = set(holdout)
            for other in conflicted({t.anchor_id}, world.corpus.graph):
                blocked |= world.corpus.authors[other].paper_ids
            assert t.positive_id not in blocked and t.negative_id not in blocked
            replay = build_triplets(t.anchor_id, t.view, world.profiles[t.anchor_id].text,
                                    world.paper_index.doc_ids, world.paper_index, blocked)
        assert t in replay


def test_shortfall_returns_what_exists(world, caplog):
    out = generate_training_set(world.corpus, world.profiles, world.paper_index, world.profile_index,
                                10_000, seed=1, holdout=world.planted.holdout)
    assert 0 < len(out) < 10_000
    assert "not reached" in caplog.text
