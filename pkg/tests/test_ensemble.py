import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kens.align import AlignmentMap
from kens.datasets import make_complementary_kgs
from kens.ensemble import (BoostState, KnowledgeEnsemble, Nomination, boost, build_validation_queries,
                           combine, critical_pairs, nominate, pair_order, round_loss, round_weight,
                           score_mrr, score_vote)
from kens.exceptions import NotFittedError
from kens.kg import KnowledgeGraph, Query, split_dataset
from kens.metrics import evaluate_kg
from kens.space import EmbeddingSpace
from kens.train import JointEmbedding

Q = Query(0, 0)


def noms(*lists, models=None):
    models = models or [f"m{i}" for i in range(len(lists))]
    return [Nomination(m, Q, list(c)) for m, c in zip(models, lists)]


def brute_rank(nominations, weights, u, k):
    cands = sorted({e for n in nominations for e in n.candidates})
    s = {e: sum(weights[n.model] for n in nominations if e in n.candidates) for e in cands}
    tu = {e: sum(u[n.model] for n in nominations if e in n.candidates) for e in cands}
    pos = {e: min(n.candidates.index(e) for n in nominations if e in n.candidates) for e in cands}
    return sorted(cands, key=lambda e: (-s[e], -tu[e], pos[e], e))[:k]


def test_vote_prefers_consensus():
    out = score_vote(noms([5, 1], [1, 7], [1, 9]), {"m0": 0.9, "m1": 0.1, "m2": 0.1})
    assert out.entities[0] == 1 and out.scores[0] == 3


def test_vote_tie_broken_by_mrr_hand_oracle():
    # counts: 4 -> 2, 6 -> 2, 8 -> 1. Tie 4/6 broken by summed u: 4 has .5+.2, 6 has .3+.2
    out = score_vote(noms([4, 6], [6, 8], [4, 6, 8][:1] + [6]), {"m0": 0.5, "m1": 0.3, "m2": 0.2})
    # nominations: m0 {4,6}, m1 {6,8}, m2 {4,6}; counts 4:2, 6:3, 8:1
    assert out.entities == [6, 4, 8]
    tie = score_vote(noms([4], [6]), {"m0": 0.2, "m1": 0.7})
    assert tie.entities == [6, 4]


def test_mrr_weighting():
    out = score_mrr(noms([1], [2]), {"m0": 0.9, "m1": 0.1})
    assert out.entities == [1, 2]
    ones = {"m0": 1.0, "m1": 1.0, "m2": 1.0}
    n = noms([3, 1, 2], [2, 3], [9])
    assert score_mrr(n, ones).entities == score_vote(n, ones).entities


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(1, 6))
def test_combine_matches_brute_force(seed, m, k):
    rng = np.random.default_rng(seed)
    lists = [rng.permutation(10)[: rng.integers(0, 7)].tolist() for _ in range(m)]
    n = noms(*lists)
    u = {f"m{i}": float(rng.random()) for i in range(m)}
    w = {f"m{i}": float(rng.integers(0, 3)) for i in range(m)}
    assert combine(n, w, u, k).entities == brute_rank(n, w, u, k)
    assert score_mrr(n, u, k).entities == brute_rank(n, u, u, k)
    ones = {key: 1.0 for key in u}
    assert score_vote(n, u, k).entities == brute_rank(n, ones, u, k)
    nominated = {e for lst in lists for e in lst}
    assert set(combine(n, w, u, k).entities) <= nominated
    scaled = {key: 3.5 * v for key, v in w.items()}
    assert combine(n, scaled, u, k).entities == combine(n, w, u, k).entities


def test_single_model_keeps_its_order():
    n = noms([7, 2, 9, 0])
    for weights in ({"m0": 1.0}, {"m0": 0.3}, {"m0": 0.0}):
        assert combine(n, weights, {"m0": 0.5}).entities == [7, 2, 9, 0]


def test_empty_nominations():
    out = combine(noms([], []), {"m0": 1, "m1": 1}, {"m0": 1, "m1": 1})
    assert out.entities == [] and out.reason


def test_example_validation_queries():
    g, country, genre, japan, monogatari, love = 0, 0, 1, 1, 2, 3
    valid = [(g, country, japan), (g, genre, monogatari), (g, genre, love), (4, genre, love)]
    queries = build_validation_queries(g, valid)
    assert len(queries) == 2
    by_rel = {q.query.relation: q.answers for q in queries}
    assert by_rel[genre] == {monogatari, love}
    assert build_validation_queries(9, valid) == []
    head = build_validation_queries(love, valid, "head")
    assert [(q.query.relation, q.answers) for q in head] == [(genre, {g, 4})]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 3), st.integers(0, 9)), max_size=25))
def test_validation_query_count(valid):
    for e in range(5):
        assert len(build_validation_queries(e, valid)) == len({(h, r) for h, r, _ in valid if h == e})


MOD, MONO, LOVE, SCIFI = 10, 11, 12, 13


def test_example_critical_pairs_and_orders():
    pairs = critical_pairs([MONO, LOVE, MOD, SCIFI], {MONO, LOVE})
    assert len(pairs) == 4
    assert (MONO, LOVE) not in pairs and (MOD, SCIFI) not in pairs
    assert critical_pairs([1, 2], {1, 2}) == []
    ranking = [MOD, MONO, LOVE, SCIFI]
    assert pair_order(ranking, (MONO, MOD)) == -1
    assert pair_order(ranking, (MONO, SCIFI)) == 1
    assert pair_order([MONO], (MONO, SCIFI)) == 1
    assert pair_order([SCIFI], (MONO, SCIFI)) == -1
    assert pair_order([], (MONO, SCIFI)) == -1


@settings(max_examples=40, deadline=None)
@given(st.sets(st.integers(0, 12), max_size=10), st.sets(st.integers(0, 12), max_size=5))
def test_critical_pair_count(pool, answers):
    assert len(critical_pairs(pool, answers)) == len(pool & answers) * len(pool - answers)


def test_closed_form_hand_example():
    d = np.full(4, 0.25)
    orders = np.array([1, 1, 1, -1])
    assert round_weight(d, orders, epsilon=0.0) == pytest.approx(0.5 * math.log(3), abs=1e-12)
    assert 0.5 * math.log(3) == pytest.approx(0.5493, abs=1e-4)


def test_symmetric_update_keeps_distribution():
    state = boost(np.array([[1.0, 1.0]]), ["m"])
    assert np.allclose(state.distribution, [0.5, 0.5])
    d = np.array([0.5, 0.5])
    factors = d * np.exp(-0.5 * np.array([1, 1]))
    assert np.allclose(factors / factors.sum(), [0.5, 0.5])


def test_selection_without_replacement():
    orders = np.array([[1, 1, -1], [1, -1, -1], [-1, 1, 1]], dtype=float)
    state = boost(orders, ["a", "b", "c"])
    chosen = [r.model for r in state.rounds]
    assert sorted(chosen) == ["a", "b", "c"]
    assert state.remaining == []
    assert state.final_weights()[chosen[0]] == max(state.rounds[0].weight, 0)
    assert all(v >= 0 for v in state.final_weights().values())
    partial = boost(orders, ["a", "b", "c"], n_rounds=1)
    unpicked = set("abc") - {partial.rounds[0].model}
    assert all(partial.final_weights()[m] == 0 for m in unpicked)
    with pytest.raises(ValueError):
        boost(np.zeros((2, 0)))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_weight_sign_follows_mass(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 9))
    d = rng.random(n)
    d /= d.sum()
    orders = rng.choice([-1.0, 1.0], n)
    plus, minus = d[orders == 1].sum(), d[orders == -1].sum()
    w = round_weight(d, orders, epsilon=1e-9)
    if plus > minus + 1e-9:
        assert w > 0
    elif minus > plus + 1e-9:
        assert w < 0


def test_round_loss_is_z():
    d = np.array([0.2, 0.3, 0.5])
    o = np.array([1.0, -1.0, 1.0])
    assert round_loss(d, o, 0.4) == pytest.approx(0.2 * math.exp(-0.4) + 0.3 * math.exp(0.4) + 0.5 * math.exp(-0.4))


def example_space():
    """Target 'el' and foreign 'ja' with hand-set TransE tables on a line."""
    el = KnowledgeGraph("el", ["genji", "mono", "love", "mod", "scifi"], ["genre"],
                        train=[(0, 0, 3)], valid=[(0, 0, 1), (0, 0, 2)])
    ja = KnowledgeGraph("ja", ["genji", "mono", "love", "mod", "scifi"], ["genre"], train=[(0, 0, 1)])
    space = EmbeddingSpace("transe", 1)
    # el model puts 'mod' first; ja model puts mono, love first
    space.add_kg("el", el.entities, el.relations, np.array([[0.0], [2.0], [3.0], [1.0], [4.0]]), np.array([[1.0]]))
    space.add_kg("ja", ja.entities, ja.relations, np.array([[0.0], [1.0], [1.1], [3.0], [4.0]]), np.array([[1.0]]))
    amap = AlignmentMap("el", "ja", {i: i for i in range(5)}, {i: i for i in range(5)})
    return [el, ja], space, {("el", "ja"): amap}


def test_boosting_favours_the_model_that_orders_answers_correctly():
    kgs, space, maps = example_space()
    ens = KnowledgeEnsemble(target="el", mode="boost", k=2, filter_train=False).fit((kgs, space, []), maps=maps)
    weights = ens.entity_weights_[("tail", 0)]
    assert not weights.fallback
    assert weights.weights["ja"] > weights.weights["el"] == 0
    assert ens.nominate("el", Query(0, 0)).candidates == [3, 0]
    assert sorted(ens.rank(Query(0, 0)).entities) == [1, 2]


def test_nominate_matches_brute_force():
    rng = np.random.default_rng(0)
    n = 20
    a = KnowledgeGraph("a", [f"a{i}" for i in range(n)], ["r", "s"])
    b = KnowledgeGraph("b", [f"b{i}" for i in range(n + 3)], ["s", "r"])
    space = EmbeddingSpace("rotate", 3)
    space.add_kg("a", a.entities, a.relations, rng.normal(size=(n, 6)), rng.normal(size=(2, 3)))
    space.add_kg("b", b.entities, b.relations, rng.normal(size=(n + 3, 6)), rng.normal(size=(2, 3)))
    perm = rng.permutation(n + 3)
    fwd = {i: int(perm[i]) for i in range(n) if i != 4}
    amap = AlignmentMap("a", "b", fwd, {v: k for k, v in fwd.items()})
    q = Query(2, 0)
    kgs = {"a": a, "b": b}

    own = nominate("a", q, "a", kgs, space, {("a", "b"): amap}, k=5)
    scores = [space.score_triples("a", [(2, 0, e)])[0] for e in range(n)]
    assert own.candidates == sorted(range(n), key=lambda e: (-scores[e], e))[:5]

    foreign = nominate("b", q, "a", kgs, space, {("a", "b"): amap}, k=5, exclude={0})
    qb = Query(fwd[2], 1)
    sb = {e: space.score_triples("b", [(qb.entity, 1, e)])[0] for e in range(n + 3)}
    back = {v: k for k, v in fwd.items()}
    expected = [back[e] for e in sorted(sb, key=lambda e: (-sb[e], e)) if e in back and back[e] != 0][:5]
    assert foreign.candidates == expected
    assert nominate("b", Query(4, 0), "a", kgs, space, {("a", "b"): amap}).candidates == []

    small = KnowledgeGraph("s", ["x", "y", "z"], ["r"])
    sp = EmbeddingSpace("transe", 1)
    sp.add_kg("s", small.entities, small.relations, np.array([[0.0], [2.0], [1.0]]), np.array([[1.0]]))
    assert nominate("s", Query(0, 0), "s", {"s": small}, sp, {}, k=10).candidates == [2, 0, 1]


def fuzz_instance(rng):
    pool_size = int(rng.integers(2, 9))
    m = int(rng.integers(1, 5))
    pool = list(range(pool_size))
    n_ans = int(rng.integers(1, pool_size))
    answers = set(rng.choice(pool, n_ans, replace=False).tolist())
    rankings = [rng.permutation(pool)[: rng.integers(0, pool_size + 1)].tolist() for _ in range(m)]
    pairs = critical_pairs(pool, answers)
    orders = np.array([[pair_order(r, p) for p in pairs] for r in rankings], dtype=float)
    return rankings, pairs, orders


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_boost_state_laws(seed):
    _, _, orders = fuzz_instance(np.random.default_rng(seed))
    state = boost(orders)
    for rnd in state.rounds:
        assert rnd.distribution.sum() == pytest.approx(1.0, abs=1e-9)
        factors = rnd.distribution * np.exp(-rnd.weight * rnd.orders)
        assert float(np.sum(factors)) == rnd.z
        assert 0 < rnd.z <= 1 + 1e-12
    assert state.distribution.sum() == pytest.approx(1.0, abs=1e-9)
    assert state.combined_margin().shape == (orders.shape[1],)


def test_fallback_without_validation():
    kgs, space, maps = example_space()
    ens = KnowledgeEnsemble(target="el", mode="boost", k=4).fit((kgs, space, []), maps=maps)
    assert ens.boost_weights(4).fallback
    assert ens.weights_for(Query(4, 0)) == ens.u_


@pytest.fixture(scope="module")
def trained():
    kgs, seeds, _ = make_complementary_kgs(n_entities=45, seed=3)
    kgs = [split_dataset(kg, seed=i) for i, kg in enumerate(kgs)]
    est = JointEmbedding(model="rotate", dim=8, batch_size=64, epochs=30, n_negatives=2,
                         self_learning=False, seed=0).fit(kgs, seeds)
    return est


def test_ensemble_end_to_end(trained):
    ens = KnowledgeEnsemble(mode="boost", k=5).fit(trained)
    assert ens.target_ == "el"
    assert set(ens.u_) == {"el", "ja", "en"}
    assert all(0 <= v <= 1 for v in ens.u_.values())
    for ew in ens.entity_weights_.values():
        assert all(w >= 0 for w in ew.weights.values())
        if ew.fallback:
            assert ew.weights == ens.u_
    preds = ens.predict([(0, 0), Query(1, 1)])
    assert all(len(p) <= 5 for p in preds)
    for mode in ("vote", "mrr", "boost"):
        report = evaluate_kg(ens, mode=mode)
        assert report.hits["1"] <= report.hits["3"] <= report.hits["10"]


def test_single_kg_ensemble_equals_single_model(trained):
    el = trained.kgs_[0]
    X = ([el], trained.space_, [])
    single = evaluate_kg(KnowledgeEnsemble(mode="vote").fit(X), mode="single")
    for mode in ("vote", "mrr", "boost"):
        ens = KnowledgeEnsemble(mode=mode).fit(X)
        assert evaluate_kg(ens).hits == single.hits
        q = Query(int(el.test[0, 0]), int(el.test[0, 1]))
        assert ens.rank(q).entities == ens.nominate("el", q).candidates


def test_both_directions(trained):
    ens = KnowledgeEnsemble(mode="boost", k=5, direction="both").fit(trained)
    assert {d for d, _ in ens.entity_weights_} == {"tail", "head"}
    report = evaluate_kg(ens)
    assert report.n_queries == 2 * len(trained.kgs_[0].test)


def test_estimator_checks(trained):
    with pytest.raises(NotFittedError):
        KnowledgeEnsemble().rank(Q)
    with pytest.raises(ValueError):
        KnowledgeEnsemble(mode="stack").fit(trained)
    with pytest.raises(KeyError):
        KnowledgeEnsemble(target="fr").fit(trained)
