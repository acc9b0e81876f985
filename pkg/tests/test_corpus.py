import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from revhelp.corpus import (
    CorpusError,
    Review,
    TokenizePolicy,
    Vocabulary,
    build_vocabulary,
    ingest,
    load_split,
    save_split,
    split_corpus,
    tokenize,
)


def write_lines(path, rows):
    path.write_text("".join((r if isinstance(r, str) else json.dumps(r)) + "\n" for r in rows), encoding="utf-8")
    return path


def review(user="u", item="i", t=0, votes=(30, 40), text="zoom lens", rating=4.0):
    return Review(user, item, rating, t, text, votes[0], votes[1])


def test_ingest_maps_default_fields(tmp_path):
    p = write_lines(tmp_path / "r.jsonl", [
        {"user": "A1", "item": "B1", "rating": 5, "time": 1300000000, "text": "great zoom", "helpful": [3, 4]}
    ])
    (r,) = ingest(p)
    assert (r.user_id, r.item_id, r.rating, r.timestamp) == ("A1", "B1", 5.0, 1300000000)
    assert (r.helpful_votes, r.total_votes) == (3, 4)
    assert r.helpfulness == 0.75


def test_ingest_counts_missing_field(tmp_path):
    good = {"user": "A", "item": "B", "rating": 5, "time": 1, "text": "x", "helpful": [1, 2]}
    bad = {k: v for k, v in good.items() if k != "text"}
    diag = {}
    out = ingest(write_lines(tmp_path / "r.jsonl", [good, bad, good]), diagnostics=diag)
    assert len(out) == 2
    assert diag == {"missing_field": 1}


def test_ingest_empty_file_warns(tmp_path, caplog):
    p = tmp_path / "empty.jsonl"
    p.write_text("", encoding="utf-8")
    assert ingest(p) == []
    assert "no reviews" in caplog.text


def test_ingest_mostly_malformed_is_fatal(tmp_path):
    good = {"user": "A", "item": "B", "rating": 5, "time": 1, "text": "x", "helpful": [1, 2]}
    with pytest.raises(CorpusError, match="malformed"):
        ingest(write_lines(tmp_path / "r.jsonl", [good, "{not json", "[1, 2]"]))


def test_ingest_unreadable_file():
    with pytest.raises(CorpusError):
        ingest("/nonexistent/reviews.jsonl")


def test_ingest_custom_schema(tmp_path):
    schema = {"user_id": "reviewerID", "item_id": "asin", "rating": "overall", "timestamp": "unixReviewTime",
              "text": "reviewText", "helpful_votes": "up", "total_votes": "n"}
    p = write_lines(tmp_path / "r.jsonl", [
        {"reviewerID": "A", "asin": "B", "overall": 3, "unixReviewTime": 7, "reviewText": "ok", "up": 2, "n": 8}
    ])
    (r,) = ingest(p, schema)
    assert r.helpfulness == 0.25


@pytest.mark.parametrize(
    "text, expected",
    [
        ("60D focus screen is grainy", ["60d", "focus", "screen", "grainy"]),
        ("!!!", []),
        ("Zoom, zoom.", ["zoom", "zoom"]),
    ],
)
def test_tokenize_examples(text, expected):
    assert tokenize(text) == expected


def test_tokenize_min_length_policy():
    assert tokenize("a bb ccc", TokenizePolicy(stopwords=frozenset(), min_length=3)) == ["ccc"]


def test_vocabulary_min_df_threshold():
    docs = [["zoom"]] * 7 + [["qux"]]
    assert build_vocabulary(docs, min_df=2).index_to_word == ["zoom"]


def test_vocabulary_lexicographic_tie_break():
    docs = [["a", "b"]] * 3
    assert build_vocabulary(docs, min_df=1, max_vocab=1).index_to_word == ["a"]


def test_vocabulary_empty_is_fatal():
    with pytest.raises(CorpusError):
        build_vocabulary([["a"], ["b"]], min_df=2)


def test_vocabulary_tsv_round_trip():
    v = build_vocabulary([["x", "y"], ["y"]], min_df=1)
    assert Vocabulary.from_tsv(v.to_tsv()) == v
    assert v.word_to_index == {"y": 0, "x": 1}


def five_reviews():
    return [review(t=t, text="zoom lens focus") for t in range(5)]


def test_split_three_newest_withheld():
    s = split_corpus(five_reviews(), min_df=1, longtail_threshold=1)
    assert [d.timestamp for d in s.train] == [0, 1]
    assert sorted(d.timestamp for d in s.test) == [2, 3, 4]


def test_split_low_votes_excluded_from_train():
    rs = five_reviews() + [review(t=-1, votes=(3, 4), text="zoom")]
    s = split_corpus(rs, min_df=1, longtail_threshold=1)
    assert all(d.timestamp != -1 for d in s.train)
    assert s.dropped_counts["below_train_votes"] == 1


def test_split_long_tail_user_goes_to_background():
    s = split_corpus(five_reviews(), min_df=1, longtail_threshold=10)
    assert all(d.user_key == s.background_user_key for d in s.train + s.test)


def test_split_drops_unvoted_and_empty_reviews():
    rs = five_reviews() + [review(t=-2, votes=(0, 0)), review(user="v", t=-3, text="!!!"),
                           *[review(user="v", t=k, text="zoom") for k in range(4)]]
    s = split_corpus(rs, min_df=1, longtail_threshold=1)
    assert s.dropped_counts["no_votes"] == 1
    assert s.dropped_counts["empty_train_tokens"] == 1


def test_split_empty_train_is_fatal():
    with pytest.raises(CorpusError, match="train_min_votes"):
        split_corpus(five_reviews(), train_min_votes=1000, min_df=1)


def test_split_equal_timestamps_break_by_input_position():
    rs = [review(t=0, text=f"zoom w{k}") for k in range(4)]
    s = split_corpus(rs, min_df=1, longtail_threshold=1)
    assert [d.review_index for d in s.train] == [0]
    assert sorted(d.review_index for d in s.test) == [1, 2, 3]


review_lists = st.lists(
    st.builds(
        review,
        user=st.sampled_from(["u1", "u2", "u3"]),
        item=st.sampled_from(["i1", "i2"]),
        t=st.integers(0, 50),
        votes=st.tuples(st.integers(0, 30), st.integers(1, 30)).map(lambda p: (min(p), max(p))),
        text=st.sampled_from(["zoom lens", "battery life", "zoom battery", "!!!"]),
    ),
    min_size=1,
    max_size=40,
)


@given(review_lists)
def test_split_invariants(rs):
    try:
        s = split_corpus(rs, train_min_votes=10, test_min_votes=5, min_df=1, longtail_threshold=2)
    except CorpusError:
        return
    ts = [(d.timestamp, d.review_index) for d in s.train]
    assert ts == sorted(ts)
    assert not {d.review_index for d in s.train} & {d.review_index for d in s.test}
    assert all(rs[d.review_index].total_votes >= 10 for d in s.train)
    assert all(rs[d.review_index].total_votes >= 5 for d in s.test)
    W = len(s.vocab)
    for d in s.train + s.test:
        assert d.tokens.size >= 1 and d.tokens.min() >= 0 and d.tokens.max() < W
        assert 0.0 <= d.helpfulness <= 1.0


def test_save_load_round_trip_is_byte_stable(tmp_path):
    s = split_corpus(five_reviews() * 2, min_df=1, longtail_threshold=1)
    save_split(s, tmp_path / "a")
    loaded = load_split(tmp_path / "a")
    save_split(loaded, tmp_path / "b")
    for name in ["train.jsonl", "test.jsonl", "vocab.tsv", "split.json"]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert loaded.vocab == s.vocab
    assert np.array_equal(loaded.train[0].tokens, s.train[0].tokens)


def test_load_rejects_out_of_range_tokens(tmp_path):
    s = split_corpus(five_reviews(), min_df=1, longtail_threshold=1)
    s.train[0].tokens = np.array([99])
    save_split(s, tmp_path)
    with pytest.raises(CorpusError, match="outside vocabulary"):
        load_split(tmp_path)
