import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kens.exceptions import ConfigError, EmptyGraphError, TripleParseError, UnknownEntityError
from kens.kg import (AnswerSet, KnowledgeGraph, Query, SeedAlignment, load_alignment, load_splits,
                     load_triples, split_dataset, split_sizes, validate_unified_schema,
                     write_alignment, write_triples)


def write(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


def test_duplicate_lines_are_deduplicated(tmp_path):
    kg = load_triples(write(tmp_path / "t.tsv", ["a\tr\tb", "a\tr\tb"]), "x")
    assert (kg.n_entities, kg.n_relations, len(kg.train)) == (2, 1, 1)
    assert kg.n_lines == 2 and kg.n_duplicates == 1


def test_wrong_field_count_reports_line(tmp_path):
    with pytest.raises(TripleParseError) as err:
        load_triples(write(tmp_path / "t.tsv", ["a\tr"]), "x")
    assert err.value.lineno == 1


def test_parse_error_line_number_skips_comments(tmp_path):
    with pytest.raises(TripleParseError) as err:
        load_triples(write(tmp_path / "t.tsv", ["# header", "a\tr\tb", "", "a\tr\tb\tc"]), "x")
    assert err.value.lineno == 4


def test_empty_file(tmp_path):
    with pytest.raises(EmptyGraphError):
        load_triples(write(tmp_path / "t.tsv", ["# only a comment"]), "x")


def test_first_appearance_order_and_unicode(tmp_path):
    kg = load_triples(write(tmp_path / "t.tsv", ["Γένζι\tgenre\tΈπος", "b\tcountry\tΓένζι"]), "el")
    assert kg.entities == ["Γένζι", "Έπος", "b"]
    assert kg.relations == ["genre", "country"]
    assert kg.train.tolist() == [[0, 0, 1], [2, 1, 0]]


def test_splits_share_vocabulary(tmp_path):
    paths = {
        "train": write(tmp_path / "tr", ["a\tr\tb"]),
        "valid": write(tmp_path / "va", ["b\tr\tc", "a\tr\tb"]),
        "test": write(tmp_path / "te", ["c\ts\ta"]),
    }
    kg = load_splits(paths, "x")
    assert kg.entities == ["a", "b", "c"]
    assert len(kg.train) == len(kg.valid) == len(kg.test) == 1


def test_roundtrip(tmp_path):
    kg = load_triples(write(tmp_path / "t.tsv", ["a\tr\tb", "b\ts\tc", "c\tr\ta"]), "x")
    write_triples(kg, tmp_path / "out.tsv")
    again = load_triples(tmp_path / "out.tsv", "x")
    assert {kg.decode(t) for t in kg.train} == {again.decode(t) for t in again.train}


def test_invariants_checked():
    with pytest.raises(ValueError):
        KnowledgeGraph("x", ["a"], ["r"], train=[(0, 0, 1)])
    with pytest.raises(ValueError):
        KnowledgeGraph("x", ["a", "a"], ["r"])
    with pytest.raises(ValueError):
        KnowledgeGraph("x", ["a", "b"], ["r"], train=[(0, 0, 1)], test=[(0, 0, 1)])


def test_graph_is_read_only():
    kg = KnowledgeGraph("x", ["a", "b"], ["r"], train=[(0, 0, 1)])
    with pytest.raises(ValueError):
        kg.train[0, 0] = 1


def test_query_and_answer_set():
    kg = KnowledgeGraph("x", ["a", "b"], ["r"], train=[(0, 0, 1)])
    Query(0, 0).check(kg)
    with pytest.raises(IndexError):
        Query(5, 0).check(kg)
    with pytest.raises(ValueError):
        Query(0, 0, "sideways")
    with pytest.raises(ValueError):
        AnswerSet(Query(0, 0), frozenset())
    assert kg.answers()[(0, 0)] == {1}
    assert kg.answers(direction="head")[(1, 0)] == {0}


class TestAlignment:
    @pytest.fixture
    def kgs(self):
        a = KnowledgeGraph("a", ["a", "b", "c"], ["r"], train=[(0, 0, 1), (1, 0, 2)])
        b = KnowledgeGraph("b", ["x", "y", "z"], ["r"], train=[(0, 0, 1)])
        return a, b

    def test_single_pair(self, tmp_path, kgs):
        store = load_alignment(write(tmp_path / "al", ["a\tx"]), *kgs)
        assert store.pairs().tolist() == [[0, 0]]

    def test_conflict_skipped(self, tmp_path, kgs):
        store = load_alignment(write(tmp_path / "al", ["a\tx", "a\ty"]), *kgs)
        assert len(store) == 1 and store.conflicts == 1

    def test_unknown_ids_listed(self, tmp_path, kgs):
        with pytest.raises(UnknownEntityError) as err:
            load_alignment(write(tmp_path / "al", ["a\tq", "w\tx"]), *kgs)
        assert err.value.ids == ["q", "w"]

    def test_coverage(self, tmp_path):
        names = [f"e{i}" for i in range(100)]
        a = KnowledgeGraph("a", names, ["r"])
        b = KnowledgeGraph("b", [n.upper() for n in names], ["r"])
        store = load_alignment(write(tmp_path / "al", [f"e{i}\tE{i}" for i in range(40)]), a, b)
        assert store.coverage == pytest.approx(0.40)

    def test_write_roundtrip(self, tmp_path, kgs):
        store = SeedAlignment("a", "b", [(0, 2), (2, 0)])
        write_alignment(store, *kgs, tmp_path / "al")
        assert load_alignment(tmp_path / "al", *kgs).pairs().tolist() == [[0, 2], [2, 0]]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6)), max_size=30))
def test_seed_alignment_stays_one_to_one(pairs):
    store = SeedAlignment("a", "b")
    kept, conflicts = {}, 0
    for a, b in pairs:
        store.add(a, b)
        if kept.get(a) == b:
            continue
        if a in kept or b in kept.values():
            conflicts += 1
        else:
            kept[a] = b
    arr = store.pairs()
    assert len(set(arr[:, 0].tolist())) == len(arr) == len(set(arr[:, 1].tolist()))
    assert dict(map(tuple, arr.tolist())) == kept
    assert store.conflicts == conflicts


def test_seed_alignment_rejects_self_pair():
    with pytest.raises(ValueError):
        SeedAlignment("a", "a")


def test_split_sizes_examples():
    assert split_sizes(10, (0.6, 0.3, 0.1)) == (6, 3, 1)
    n_train, n_valid, n_test = split_sizes(13839, (0.6, 0.3, 0.1))
    for got, want in zip((n_train, n_valid, n_test), (8303, 4152, 1384)):
        assert abs(got - want) <= 1
    assert n_train + n_valid + n_test == 13839


@pytest.mark.parametrize("ratios", [(0.6, 0.3, 0.2), (0.7, 0.3, 0.0), (1.0,), (-0.1, 0.6, 0.5)])
def test_bad_ratios(ratios):
    with pytest.raises(ConfigError) as err:
        split_sizes(10, ratios)
    assert err.value.field == "ratios"


def _kg_with(n):
    triples = [(i % 7, i % 3, (i * 5 + 1) % 11) for i in range(n)]
    triples = sorted(set(triples))
    return KnowledgeGraph("x", [f"e{i}" for i in range(11)], ["r0", "r1", "r2"], train=triples)


def test_split_example_and_determinism():
    kg = KnowledgeGraph("x", [f"e{i}" for i in range(11)], ["r"],
                        train=[(i, 0, i + 1) for i in range(10)])
    one, two = split_dataset(kg, seed=7), split_dataset(kg, seed=7)
    assert (len(one.train), len(one.valid), len(one.test)) == (6, 3, 1)
    for s in ("train", "valid", "test"):
        assert np.array_equal(one.split(s), two.split(s))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 60), st.integers(0, 2**32 - 1))
def test_split_is_a_partition(n, seed):
    kg = _kg_with(n)
    out = split_dataset(kg, (0.6, 0.3, 0.1), seed=seed)
    parts = [set(map(tuple, out.split(s).tolist())) for s in ("train", "valid", "test")]
    assert sum(len(p) for p in parts) == len(kg.train)
    assert set().union(*parts) == set(map(tuple, kg.train.tolist()))
    expected = (0.6, 0.3, 0.1)
    for part, ratio in zip(parts, expected):
        assert abs(len(part) - ratio * len(kg.train)) <= 1


def test_unified_schema_report():
    a = KnowledgeGraph("a", ["x", "y"], ["genre", "country"])
    b = KnowledgeGraph("b", ["x", "y"], ["genre"])
    report = validate_unified_schema([a, b])
    assert report.usage["genre"] == ["a", "b"]
    assert report.non_shared == ["country"]
    assert "genre" in report.shared
    with pytest.raises(ValueError):
        validate_unified_schema([a])
