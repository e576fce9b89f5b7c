import itertools
import json
import random
from datetime import date
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from revrank.clients import StubVerifier
from revrank.corpus import (
    Author,
    AuthorMention,
    CoauthorGraph,
    Corpus,
    Paper,
    build_coauthor_graph,
    disambiguate_authors,
    ingest_papers,
    load_normalized_papers,
    paper_to_json,
    papers_in_window,
    read_jsonl_lines,
    two_year_window,
)
from revrank.errors import CorpusIntegrityError, VerifierUnavailable

DATA = Path(__file__).parent / "data"


def record(pid, **kw):
    base = {"id": pid, "title": "T", "abstract": "A", "authors": [{"name": "N"}], "last_revised": "2024-01-01"}
    base.update(kw)
    return base


# -- ingestion ----------------------------------------------------------------


def test_fixture_survivors_match_manifest():
    manifest = json.loads((DATA / "raw_10.manifest.json").read_text())
    res = ingest_papers(read_jsonl_lines(DATA / "raw_10.jsonl"))
    assert sorted(p.id for p in res.papers) == manifest["survivors"]
    assert res.reject_count == 3
    assert {r.record_id: r.reason for r in res.rejected} == manifest["rejected"]


def test_fixture_normalization():
    res = ingest_papers(read_jsonl_lines(DATA / "raw_10.jsonl"))
    by_id = {m.mention_id: m for m in res.mentions}
    assert by_id["r01#0"].email == "ada@uni.edu"
    assert by_id["r01#0"].affiliation == "Uni of Somewhere"
    assert by_id["r02#0"].email is None and by_id["r02#0"].affiliation is None
    papers = {p.id: p for p in res.papers}
    assert papers["r01"].subarea == "IR"
    assert papers["r09"].subarea == "OTHER"
    assert papers["r05"].author_mention_ids == ("r05#0", "r05#1")
    assert papers["r01"].text == "Dense retrieval for citation recommendation We study dense retrievers for citation recommendation."


def test_empty_abstract_is_dropped_and_counted():
    res = ingest_papers([record("a", abstract=""), record("b")])
    assert [p.id for p in res.papers] == ["b"]
    assert res.reject_count == 1
    assert res.rejected[0].reason == "missing_abstract"


def test_latest_revision_wins_in_either_order():
    old = record("x", title="old", last_revised="2024-01-01")
    new = record("x", title="new", last_revised="2025-02-02")
    for stream in ([old, new], [new, old]):
        res = ingest_papers(stream)
        assert [p.title for p in res.papers] == ["new"]
        assert res.superseded == 1
        assert [m.mention_id for m in res.mentions] == ["x#0"]


def test_malformed_records_never_abort_the_stream():
    stream = [
        "{not json",
        "[1, 2]",
        record("bad-authors", authors="Someone"),
        record("bad-date", last_revised="yesterday"),
        {"title": "no id"},
        record("ok"),
    ]
    res = ingest_papers(stream)
    assert [p.id for p in res.papers] == ["ok"]
    assert [r.reason for r in res.rejected] == [
        "malformed_json", "malformed_record", "malformed_authors", "malformed_field", "missing_id"]


def test_json_lines_are_accepted():
    res = ingest_papers([json.dumps(record("j"))])
    assert res.papers[0].id == "j"


# -- disambiguation -------------------------------------------------------------


def m(mid, name, email=None, aff=None):
    return AuthorMention(mid, name, mid.split("#")[0], email, aff)


def partition(authors):
    return sorted(sorted(a.mention_ids) for a in authors)


def test_same_email_merges():
    authors = disambiguate_authors([m("p1#0", "Ann", "a@x.edu"), m("p2#0", "A. Other", "a@x.edu")])
    assert partition(authors) == [["p1#0", "p2#0"]]
    assert authors[0].paper_ids == {"p1", "p2"}
    assert authors[0].author_id == "au_p1#0"


def test_verifier_merges_institution_variants():
    ms = [m("p1#0", "J. Smith", aff="MIT"), m("p2#0", "J. Smith", aff="Massachusetts Institute of Technology")]
    assert partition(disambiguate_authors(ms)) == [["p1#0"], ["p2#0"]]
    assert partition(disambiguate_authors(ms, StubVerifier())) == [["p1#0", "p2#0"]]


def test_bare_mentions_stay_singletons():
    ms = [m("p1#0", "Lee"), m("p2#0", "Lee")]
    assert partition(disambiguate_authors(ms, StubVerifier())) == [["p1#0"], ["p2#0"]]


def test_affiliation_tier_requires_same_name():
    ms = [m("p1#0", "Kim Park", aff="Lab"), m("p2#0", "kim park", aff="Lab"), m("p3#0", "Kim Parks", aff="Lab")]
    assert partition(disambiguate_authors(ms)) == [["p1#0", "p2#0"], ["p3#0"]]


def test_no_merge_across_distinct_emails():
    # same name and affiliation, but two different emails: must stay apart,
    # and a third email-less mention may join only one of them
    ms = [m("p1#0", "Sam", "s1@a.org", "Lab"), m("p2#0", "Sam", "s2@a.org", "Lab"), m("p3#0", "Sam", None, "Lab")]
    authors = disambiguate_authors(ms)
    assert partition(authors) == [["p1#0", "p3#0"], ["p2#0"]]


class _Down:
    def verify(self, a, b):
        raise VerifierUnavailable("offline")


def test_verifier_outage_falls_back_to_no_merge(caplog):
    ms = [m("p1#0", "J. Smith", aff="MIT"), m("p2#0", "J. Smith", aff="Massachusetts Institute of Technology")]
    assert partition(disambiguate_authors(ms, _Down())) == [["p1#0"], ["p2#0"]]
    assert "verifier unavailable" in caplog.text


mention_strategy = st.lists(
    st.tuples(
        st.sampled_from(["Ann", "ann", "Bob", "Cy"]),
        st.sampled_from([None, "a@x", "b@x", "c@x"]),
        st.sampled_from([None, "MIT", "Massachusetts Institute of Technology", "Lab"]),
    ),
    min_size=1,
    max_size=12,
)


@settings(max_examples=150, deadline=None)
@given(mention_strategy, st.randoms(use_true_random=False))
def test_disambiguation_is_order_insensitive(rows, rnd):
    ms = [m(f"p{i:02d}#0", *row) for i, row in enumerate(rows)]
    shuffled = ms[:]
    rnd.shuffle(shuffled)
    v = StubVerifier()
    assert partition(disambiguate_authors(ms, v)) == partition(disambiguate_authors(shuffled, v))


@settings(max_examples=150, deadline=None)
@given(mention_strategy)
def test_disambiguation_invariants(rows):
    ms = [m(f"p{i:02d}#0", *row) for i, row in enumerate(rows)]
    by_id = {x.mention_id: x for x in ms}
    authors = disambiguate_authors(ms, StubVerifier())
    seen = set()
    for a in authors:
        assert not (a.mention_ids & seen)
        seen |= a.mention_ids
        emails = {by_id[i].email for i in a.mention_ids} - {None}
        assert len(emails) <= 1
        if len(a.mention_ids) > 1:
            for i in a.mention_ids:
                assert by_id[i].email or by_id[i].affiliation
    assert seen == set(by_id)
    # exact-email rule: equal emails always end up together
    owner = {i: a.author_id for a in authors for i in a.mention_ids}
    for x, y in itertools.combinations(ms, 2):
        if x.email and x.email == y.email:
            assert owner[x.mention_id] == owner[y.mention_id]


# -- co-authorship graph --------------------------------------------------------


def author(aid, *mids):
    return Author(aid, frozenset(mids), aid, frozenset(x.split("#")[0] for x in mids))


def paper(pid, *mids, revised="2024-01-01"):
    return Paper(pid, "t", "a", tuple(mids), date.fromisoformat(revised))


def test_single_paper_is_a_clique():
    g = build_coauthor_graph(
        [author("A", "p#0"), author("B", "p#1"), author("C", "p#2")], [paper("p", "p#0", "p#1", "p#2")])
    assert g.edges() == {("A", "B"), ("A", "C"), ("B", "C")}


def test_disjoint_papers_give_two_components():
    authors = [author("A", "p#0"), author("B", "p#1"), author("C", "q#0"), author("D", "q#1")]
    g = build_coauthor_graph(authors, [paper("p", "p#0", "p#1"), paper("q", "q#0", "q#1")])
    assert g.neighbors("A") == {"B"} and g.neighbors("C") == {"D"}
    assert not g.has_edge("A", "C")


def test_dangling_mention_is_an_integrity_error():
    with pytest.raises(CorpusIntegrityError):
        build_coauthor_graph([author("A", "p#0")], [paper("p", "p#0", "p#1")])


def test_twelve_paper_fixture_matches_pairwise_scan():
    rng = random.Random(12)
    names = [f"A{i}" for i in range(9)]
    papers, owner = [], {}
    for k in range(12):
        team = rng.sample(names, rng.randint(1, 4))
        mids = [f"x{k}#{j}" for j in range(len(team))]
        owner.update(zip(mids, team))
        papers.append(paper(f"x{k}", *mids))
    authors = [author(n, *[mid for mid, o in owner.items() if o == n]) for n in names if n in owner.values()]
    g = build_coauthor_graph(authors, papers)
    expected = set()
    for a, b in itertools.permutations(sorted(set(owner.values())), 2):
        for p in papers:
            ids = [owner[mid] for mid in p.author_mention_ids]
            if a in ids and b in ids:
                expected.add((min(a, b), max(a, b)))
    assert g.edges() == expected


@settings(max_examples=100, deadline=None)
@given(st.lists(st.lists(st.integers(0, 7), min_size=1, max_size=4), max_size=15))
def test_graph_stays_symmetric_and_irreflexive(teams):
    g = CoauthorGraph()
    for team in teams:
        g.add_paper(f"a{i}" for i in team)
        for a, nbrs in g.adjacency.items():
            assert a not in nbrs
            for b in nbrs:
                assert a in g.adjacency[b]


# -- corpus bundle, windows, persistence ---------------------------------------------


def test_corpus_from_fixture_and_window():
    res = ingest_papers(read_jsonl_lines(DATA / "raw_10.jsonl"))
    corpus = Corpus(res.papers, disambiguate_authors(res.mentions, StubVerifier()))
    assert corpus.max_revised() == date(2025, 7, 7)
    ada = corpus.authors[corpus.mention_owner["r01#0"]]
    assert ada.paper_ids == {"r01", "r02"}
    # Bo Chen (no email, no affiliation on r02) stays apart from the Lab X mention
    assert corpus.mention_owner["r02#1"] != corpus.mention_owner["r05#1"]
    gus = corpus.mention_owner["r09#0"]
    assert gus == corpus.mention_owner["r10#1"]
    assert corpus.graph.has_edge(gus, corpus.mention_owner["r10#0"])
    window = two_year_window(corpus.max_revised())
    assert window == (date(2023, 7, 7), date(2025, 7, 7))
    assert [p.id for p in papers_in_window(ada, corpus.papers, window)] == ["r01", "r02"]
    assert papers_in_window(ada, corpus.papers, two_year_window(date(2024, 4, 1))) == [corpus.papers["r01"]]


def test_leap_day_window():
    assert two_year_window(date(2024, 2, 29))[0] == date(2022, 2, 28)


def test_normalized_round_trip(tmp_path):
    res = ingest_papers(read_jsonl_lines(DATA / "raw_10.jsonl"))
    mentions = {x.mention_id: x for x in res.mentions}
    path = tmp_path / "papers.jsonl"
    path.write_text("".join(json.dumps(paper_to_json(p, mentions)) + "\n" for p in res.papers))
    papers, ms = load_normalized_papers(path)
    assert papers == res.papers
    assert ms == res.mentions
