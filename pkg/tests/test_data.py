import itertools
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import write_split_files
from convkb.data import (
    KnowledgeBase,
    Vocab,
    bernoulli_stats,
    build_kb,
    load_kb,
    parse_triples,
    save_kb,
    split_stats,
)
from convkb.errors import DataError, DuplicateTripleError, ParseError
from oracles import count_bernoulli


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_parse_empty_file(tmp_path):
    ents, rels = Vocab(["x"]), Vocab()
    assert parse_triples(_write(tmp_path / "e.txt", ""), ents, rels) == []
    assert ents.labels == ["x"] and len(rels) == 0


def test_parse_counts_labels(tmp_path):
    ents, rels = Vocab(), Vocab()
    trips = parse_triples(_write(tmp_path / "t.txt", "a\tr\tx\na\tr\ty\nb\ts\tx\n"), ents, rels)
    assert trips == [(0, 0, 1), (0, 0, 2), (3, 1, 1)]
    assert ents.labels == ["a", "x", "y", "b"]
    assert rels.labels == ["r", "s"]


def test_parse_skips_blank_lines_and_keeps_labels_verbatim(tmp_path):
    ents, rels = Vocab(), Vocab()
    trips = parse_triples(_write(tmp_path / "t.txt", "A\tr\ta\n\n a\tr\tA\r\n"), ents, rels)
    assert ents.labels == ["A", "a", " a"]
    assert len(trips) == 2


@pytest.mark.parametrize("line", ["a\tr\n", "a\tr\tx\ty\n", "a r x\n"])
def test_parse_error_carries_line_number(tmp_path, line):
    path = _write(tmp_path / "bad.txt", "a\tr\tx\n" + line)
    with pytest.raises(ParseError) as exc:
        parse_triples(path, Vocab(), Vocab())
    assert exc.value.lineno == 2
    assert ":2:" in str(exc.value)


def test_parse_missing_file(tmp_path):
    with pytest.raises(OSError):
        parse_triples(str(tmp_path / "nope.txt"), Vocab(), Vocab())


def test_vocab_order_train_valid_test(tmp_path):
    d = write_split_files(tmp_path / "d", train="b\tr\tc\n", valid="a\ts\tb\n", test="d\tr\te\n")
    kb = load_kb(d)
    assert kb.entities == ("b", "c", "a", "d", "e")
    assert kb.relations == ("r", "s")


def test_single_triple_filter_index(tmp_path):
    d = write_split_files(tmp_path / "d", train="a\tr\tx\n")
    kb = load_kb(d)
    assert len(kb.filter_index) == 1


def test_overlap_across_splits_counted_once(tmp_path):
    d = write_split_files(tmp_path / "d", train="a\tr\tx\n", test="a\tr\tx\nb\tr\tx\n")
    kb = load_kb(d)
    assert len(kb.filter_index) == 2
    assert (0, 0, 1) in kb


def test_duplicate_within_split_rejected(tmp_path):
    d = write_split_files(tmp_path / "d", train="a\tr\tx\nb\tr\tx\na\tr\tx\n")
    with pytest.raises(DuplicateTripleError, match="'a', 'r', 'x'"):
        load_kb(d)


def test_missing_split_file(tmp_path):
    d = tmp_path / "d"
    d.mkdir()
    (d / "train.txt").write_text("a\tr\tb\n")
    with pytest.raises(DataError):
        load_kb(str(d))


def test_filter_index_membership(toy_kb):
    for name in ("train", "valid", "test"):
        for trip in toy_kb.split(name):
            assert trip in toy_kb
    assert (4, 0, 4) not in toy_kb


def test_round_trip_through_tsv(tmp_path, toy_kb):
    save_kb(toy_kb, tmp_path / "rt")
    again = build_kb(*(str(tmp_path / "rt" / f"{s}.txt") for s in ("train", "valid", "test")))
    assert again.entities == toy_kb.entities
    assert again.relations == toy_kb.relations
    for name in ("train", "valid", "test"):
        np.testing.assert_array_equal(again.split(name), toy_kb.split(name))


def test_splits_are_read_only(toy_kb):
    with pytest.raises(ValueError):
        toy_kb.train[0, 0] = 3


def _kb(train, n_e=10, n_r=1, test=()):
    return KnowledgeBase.from_triples([f"e{i}" for i in range(n_e)], [f"r{i}" for i in range(n_r)], train, (), test)


def test_bernoulli_one_to_one():
    stats = bernoulli_stats(_kb([(0, 0, 1), (1, 0, 2), (2, 0, 3)]))
    assert stats.head_prob[0] == 0.5
    assert stats.tph[0] == 1.0 and stats.hpt[0] == 1.0


def test_bernoulli_three_triples():
    # a=0, x=1, y=2, b=3
    train = [(0, 0, 1), (0, 0, 2), (3, 0, 1)]
    stats = bernoulli_stats(_kb(train))
    assert count_bernoulli(train, 0) == (1.5, 1.5)
    assert stats.tph[0] == 1.5 and stats.hpt[0] == 1.5
    assert stats.head_prob[0] == 0.5


def test_bernoulli_four_triples():
    train = [(0, 0, 1), (0, 0, 2), (0, 0, 3), (4, 0, 1)]
    stats = bernoulli_stats(_kb(train))
    tph, hpt = count_bernoulli(train, 0)
    assert (tph, hpt) == (2.0, 4 / 3)
    assert stats.tph[0] == pytest.approx(2.0, abs=1e-15)
    assert stats.hpt[0] == pytest.approx(4 / 3, abs=1e-15)
    assert stats.head_prob[0] == pytest.approx(0.6, abs=1e-15)


def test_bernoulli_relation_missing_from_train(caplog):
    kb = _kb([(0, 0, 1)], n_r=2, test=[(1, 1, 2)])
    with caplog.at_level(logging.WARNING):
        stats = bernoulli_stats(kb)
    assert stats.head_prob[1] == 0.5
    assert "r1" in caplog.text


def test_bernoulli_empty_train():
    with pytest.raises(DataError):
        bernoulli_stats(_kb([], test=[(0, 0, 1)]))


triple_lists = st.lists(st.tuples(st.integers(0, 7), st.integers(0, 2), st.integers(0, 7)),
                        min_size=1, max_size=40, unique=True)


@settings(max_examples=60, deadline=None)
@given(triple_lists, st.randoms(use_true_random=False))
def test_bernoulli_permutation_invariant_and_bounded(train, rnd):
    kb = _kb(train, n_e=8, n_r=3)
    shuffled = list(train)
    rnd.shuffle(shuffled)
    a, b = bernoulli_stats(kb), bernoulli_stats(_kb(shuffled, n_e=8, n_r=3))
    np.testing.assert_array_equal(a.head_prob, b.head_prob)
    for r in {t[1] for t in train}:
        assert a.tph[r] >= 1 and a.hpt[r] >= 1
        assert 0 < a.head_prob[r] < 1
        tph, hpt = count_bernoulli(train, r)
        assert a.tph[r] == pytest.approx(tph) and a.hpt[r] == pytest.approx(hpt)


def test_split_stats(toy_kb):
    rows = split_stats(toy_kb)
    assert rows[0] == ("train", 5, 2, 5)
    assert rows[-1] == ("all", 5, 2, 9)


def test_train_entity_mask():
    kb = _kb([(0, 0, 1)], n_e=3, test=[(1, 0, 2)])
    assert kb.train_entity_mask.tolist() == [True, True, False]


def test_known_candidates(toy_kb):
    assert toy_kb.known_tails[(0, 0)].tolist() == [1, 2]
    assert toy_kb.known_heads[(1, 3)].tolist() == [0, 2]
    assert set(itertools.chain.from_iterable(v.tolist() for v in toy_kb.known_tails.values())) <= set(range(5))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 2), st.integers(0, 6)), max_size=30, unique=True),
       st.lists(st.tuples(st.integers(0, 6), st.integers(0, 2), st.integers(0, 6)), min_size=1, max_size=30))
def test_in_train_matches_set(train, queries):
    kb = KnowledgeBase.from_triples([str(i) for i in range(7)], ["p", "q", "r"], train)
    assert kb.in_train(queries).tolist() == [q in kb.train_set for q in queries]
