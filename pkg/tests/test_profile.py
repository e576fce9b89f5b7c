from collections import Counter
from datetime import date

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from revrank.clients import KeywordResponse, StubKeywordExtractor
from revrank.corpus import Author, Paper
from revrank.errors import ColdStartError, ContractError, KeywordExtractionError
from revrank.profile import PREFIX, KeywordBag, ReviewerProfile, linearize, profile_reviewer


class Scripted:
    """Keyword client that answers from a title -> keywords table."""

    def __init__(self, table):
        self.table = table
        self.calls = []

    def extract(self, req):
        self.calls.append(req.title)
        reply = self.table[req.title]
        if isinstance(reply, Exception):
            raise reply
        return KeywordResponse(tuple(reply))


def make(papers):
    """papers: list of (id, title, abstract, date) -> (author, lookup)"""
    lookup = {pid: Paper(pid, t, a, (f"{pid}#0",), date.fromisoformat(d)) for pid, t, a, d in papers}
    author = Author("au_x", frozenset(f"{p}#0" for p in lookup), "X", frozenset(lookup))
    return author, lookup


def test_prefix_is_exact():
    assert PREFIX == "The reviewer’s research keywords include: "


def test_duplicates_are_kept_and_ordered():
    author, lookup = make([("p1", "one", "", "2024-01-01"), ("p2", "two", "", "2024-02-01")])
    prof = profile_reviewer(author, lookup, Scripted({"one": ["a", "b"], "two": ["b", "c"]}))
    assert prof.bag.entries == (("b", 2), ("a", 1), ("c", 1))
    assert prof.text == "The reviewer’s research keywords include: b, b, a, c"
    assert prof.bag.provenance["b"] == {"p1", "p2"}


def test_singleton_profile():
    author, lookup = make([("p1", "one", "", "2024-01-01")])
    prof = profile_reviewer(author, lookup, Scripted({"one": ["x"]}))
    assert prof.text == "The reviewer’s research keywords include: x"


def test_stub_three_paper_fixture():
    author, lookup = make([
        ("p1", "graph graph neural", "retrieval", "2024-01-01"),
        ("p2", "neural ranking", "ranking of graph data", "2024-06-01"),
        ("p3", "sparse retrieval", "retrieval with sparse sparse indexes", "2025-01-01"),
    ])
    prof = profile_reviewer(author, lookup, StubKeywordExtractor(), n_keywords=2)
    # hand counts: p1 -> graph(2), then neural/retrieval tie -> neural
    #              p2 -> ranking(2), then data/graph/neural tie -> data
    #              p3 -> sparse(3), retrieval(2)
    assert dict(prof.bag.entries) == {"graph": 1, "neural": 1, "ranking": 1, "data": 1, "sparse": 1, "retrieval": 1}
    assert prof.bag.total == 6


def test_window_restricts_papers_and_cold_start():
    author, lookup = make([("old", "o", "", "2020-01-01"), ("new", "n", "", "2024-05-05")])
    client = Scripted({"o": ["old"], "n": ["new"]})
    prof = profile_reviewer(author, lookup, client, window=(date(2023, 1, 1), date(2025, 1, 1)))
    assert prof.bag.entries == (("new", 1),)
    assert client.calls == ["n"]
    with pytest.raises(ColdStartError):
        profile_reviewer(author, lookup, client, window=(date(2021, 1, 1), date(2022, 1, 1)))


def test_contract_failure_names_the_paper():
    author, lookup = make([("p1", "one", "", "2024-01-01")])
    client = Scripted({"one": ContractError("bad reply", raw=",,")})
    with pytest.raises(KeywordExtractionError) as info:
        profile_reviewer(author, lookup, client)
    assert info.value.paper_id == "p1"


def test_keywords_are_case_folded():
    bag = KeywordBag.from_lists({"p": ["BM25", "bm25", "Graph"]})
    assert bag.entries == (("bm25", 2), ("graph", 1))
    assert bag.count("BM25") == 2


def test_expansion_cap_drops_the_rarest_first():
    bag = KeywordBag.from_lists({"p": ["a"] * 3 + ["b"] * 2 + ["c"]})
    assert bag.expansion(4) == ["a", "a", "a", "b"]
    assert linearize(bag, 2) == PREFIX + "a, a"
    big = KeywordBag.from_lists({f"p{i}": [f"k{i}"] * 10 for i in range(60)})
    assert len(big.expansion()) == 512


def test_json_round_trip():
    author, lookup = make([("p1", "one", "", "2024-01-01"), ("p2", "two", "", "2024-02-01")])
    prof = profile_reviewer(author, lookup, Scripted({"one": ["a", "b"], "two": ["b"]}),
                            window=(date(2023, 1, 1), date(2025, 1, 1)))
    assert ReviewerProfile.from_json(prof.to_json()) == prof


keyword_lists = st.dictionaries(
    st.text("pq", min_size=1, max_size=3),
    st.lists(st.sampled_from(["a", "b", "c", "d"]), min_size=1, max_size=5),
    min_size=1,
    max_size=6,
)


@settings(max_examples=150, deadline=None)
@given(keyword_lists, st.randoms(use_true_random=False))
def test_bag_is_permutation_invariant_and_counts_add_up(lists, rnd):
    items = list(lists.items())
    rnd.shuffle(items)
    bag = KeywordBag.from_lists(lists)
    assert bag == KeywordBag.from_lists(dict(items))
    expected = Counter(k for kws in lists.values() for k in kws)
    assert dict(bag.entries) == dict(expected)
    assert bag.total == sum(len(v) for v in lists.values())


@settings(max_examples=100, deadline=None)
@given(keyword_lists, st.data())
def test_wider_window_never_lowers_counts(lists, data):
    keep = data.draw(st.sets(st.sampled_from(sorted(lists))))
    small = KeywordBag.from_lists({k: v for k, v in lists.items() if k in keep})
    large = KeywordBag.from_lists(lists)
    for kw, c in small.entries:
        assert large.count(kw) >= c
