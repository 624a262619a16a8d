"""Ensemble inference over per-KG knowledge models.

Every model nominates its top-K answers for a query posed on the target KG
(transferred through the entity alignment when the model lives on another
KG). Candidates are ranked by the weighted vote ``s(e) = sum_i w_i N_i(e)``
where ``N_i(e)`` says whether model ``i`` nominated ``e``. The weights are
1 (``vote``), the models' validation MRR (``mrr``), or learned per query
entity with a RankBoost-style procedure (``boost``).
"""

from __future__ import annotations

import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .align import DEFAULT_CSLS_K, AlignmentMap, align_pair, transfer_answers, transfer_query
from .kg import TAIL, AnswerSet, KnowledgeGraph, Query
from .metrics import filtered_rank, mrr

logger = logging.getLogger(__name__)

VOTE, MRR, BOOST, SINGLE = "vote", "mrr", "boost", "single"
MODES = (VOTE, MRR, BOOST)
DEFAULT_EPSILON = 1e-9


@dataclass
class Nomination:
    """One model's top-K answers for a query, in target-KG coordinates."""

    model: str
    query: Query
    candidates: list[int] = field(default_factory=list)
    scores: list[float] = field(default_factory=list)
    k: int | None = None

    def __contains__(self, entity):
        return entity in self.candidates

    def position(self, entity) -> int | None:
        try:
            return self.candidates.index(entity)
        except ValueError:
            return None


@dataclass
class Ranking:
    entities: list[int]
    scores: list[float]
    reason: str | None = None

    def __iter__(self):
        return iter(zip(self.entities, self.scores))

    def __len__(self):
        return len(self.entities)


def combine(noms: Sequence[Nomination], weights: Mapping[str, float],
            u: Mapping[str, float], k: int | None = None) -> Ranking:
    """Rank nominated entities by ``sum_i w_i N_i(e)``.

    Ties fall back to ``sum_i u_i N_i(e)``, then to the best position any
    model gave the entity, then to the entity index.
    """
    acc: dict[int, list] = {}
    for nom in noms:
        w = float(weights.get(nom.model, 0.0))
        ui = float(u.get(nom.model, 0.0))
        for pos, e in enumerate(nom.candidates):
            entry = acc.get(e)
            if entry is None:
                acc[e] = [w, ui, pos]
            else:
                entry[0] += w
                entry[1] += ui
                entry[2] = min(entry[2], pos)
    if not acc:
        return Ranking([], [], reason="no model nominated any candidate")
    order = sorted(acc, key=lambda e: (-acc[e][0], -acc[e][1], acc[e][2], e))
    if k is not None:
        order = order[:k]
    return Ranking(order, [acc[e][0] for e in order])


def score_vote(noms: Sequence[Nomination], u: Mapping[str, float], k: int | None = None) -> Ranking:
    """Majority vote: nomination counts, ties broken by validation MRR."""
    return combine(noms, {nom.model: 1.0 for nom in noms}, u, k)


def score_mrr(noms: Sequence[Nomination], u: Mapping[str, float], k: int | None = None) -> Ranking:
    """Nominations weighted by each model's validation MRR."""
    return combine(noms, u, u, k)


def build_validation_queries(entity: int, valid, direction: str = TAIL) -> list[AnswerSet]:
    """Group the validation triples anchored at ``entity`` into queries.

    Triples sharing a relation become a single query whose answer set holds
    all their far ends.
    """
    grouped = defaultdict(set)
    for h, r, t in np.asarray(valid).reshape(-1, 3).tolist():
        anchor, other = (h, t) if direction == TAIL else (t, h)
        if anchor == entity:
            grouped[r].add(other)
    return [
        AnswerSet(Query(entity, r, direction), frozenset(grouped[r]))
        for r in sorted(grouped)
    ]


def critical_pairs(pool: Iterable[int], answers: Iterable[int]) -> list[tuple[int, int]]:
    """All ``(correct, incorrect)`` pairs drawn from ``pool``."""
    pool = sorted(set(pool))
    answers = set(answers)
    good = [e for e in pool if e in answers]
    bad = [e for e in pool if e not in answers]
    return [(g, b) for g in good for b in bad]


def pair_order(ranking: Sequence[int], pair: tuple[int, int]) -> int:
    """+1 if ``ranking`` puts ``pair[0]`` strictly above ``pair[1]``, else -1.

    Entities missing from ``ranking`` sit below every ranked one; a pair
    with both ends missing counts as mis-ordered.
    """
    pos = {e: i for i, e in enumerate(ranking)}
    good, bad = pos.get(pair[0]), pos.get(pair[1])
    if good is None:
        return -1
    if bad is None:
        return 1
    return 1 if good < bad else -1


@dataclass
class BoostRound:
    model: str
    weight: float
    z: float
    candidate_weights: dict[str, float]
    distribution: np.ndarray
    orders: np.ndarray


@dataclass
class BoostState:
    models: list[str]
    orders: np.ndarray
    rounds: list[BoostRound] = field(default_factory=list)
    distribution: np.ndarray | None = None

    @property
    def remaining(self) -> list[str]:
        chosen = {r.model for r in self.rounds}
        return [m for m in self.models if m not in chosen]

    def combined_margin(self) -> np.ndarray:
        """``sum_m w^m [[p]]^m`` per critical pair, using the raw round weights."""
        margin = np.zeros(self.orders.shape[1])
        for rnd in self.rounds:
            margin += rnd.weight * rnd.orders
        return margin

    def bound(self) -> float:
        """``|P| * prod_m Z^m``, the RankBoost bound on mis-ordered pairs."""
        return self.orders.shape[1] * math.prod(r.z for r in self.rounds)

    def final_weights(self) -> dict[str, float]:
        weights = {m: 0.0 for m in self.models}
        for rnd in self.rounds:
            weights[rnd.model] = max(rnd.weight, 0.0)
        return weights


def round_weight(distribution, orders, epsilon=DEFAULT_EPSILON) -> float:
    """Closed-form weight minimizing ``Z(w)`` for one model's pair orders."""
    correct = float(distribution[orders == 1].sum())
    wrong = float(distribution[orders == -1].sum())
    return 0.5 * math.log((correct + epsilon) / (wrong + epsilon))


def round_loss(distribution, orders, weight) -> float:
    """``Z(w) = sum_p D(p) exp(-w [[p]])``."""
    return float(np.sum(distribution * np.exp(-weight * orders)))


def boost(orders, models: Sequence[str] | None = None, epsilon=DEFAULT_EPSILON,
          n_rounds: int | None = None) -> BoostState:
    """Select models round by round under a reweighted pair distribution.

    ``orders`` is an ``(M, |P|)`` array of +1/-1 pair orders. Each round
    computes every unselected model's closed-form weight, keeps the largest
    (lowest index on ties), and reweights the pairs by ``exp(-w [[p]]) / Z``.
    """
    orders = np.asarray(orders, dtype=float)
    if orders.ndim != 2 or orders.shape[1] == 0:
        raise ValueError("boosting needs an (M, |P|) order matrix with at least one pair")
    models = list(models) if models is not None else [str(i) for i in range(len(orders))]
    row = {m: i for i, m in enumerate(models)}
    state = BoostState(models, orders)
    dist = np.full(orders.shape[1], 1.0 / orders.shape[1])
    n_rounds = len(models) if n_rounds is None else min(n_rounds, len(models))
    for _ in range(n_rounds):
        remaining = state.remaining
        cand = {m: round_weight(dist, orders[row[m]], epsilon) for m in remaining}
        best = max(remaining, key=lambda m: (cand[m], -row[m]))
        w = cand[best]
        factors = dist * np.exp(-w * orders[row[best]])
        z = float(np.sum(factors))
        state.rounds.append(BoostRound(best, w, z, cand, dist, orders[row[best]]))
        dist = factors / z
    state.distribution = dist
    return state


@dataclass
class EntityWeights:
    entity: int
    weights: dict[str, float]
    fallback: bool = False
    state: BoostState | None = None
    pairs: list = field(default_factory=list)


def _map_for(maps: Mapping, a: str, b: str) -> AlignmentMap:
    amap = maps.get((a, b)) or maps.get((b, a))
    if amap is None:
        raise KeyError(f"no alignment map between {a!r} and {b!r}")
    return amap


def nominate(model: str, query: Query, target: str, kgs: Mapping[str, KnowledgeGraph], space,
             maps: Mapping, k: int | None = 10, exclude: Iterable[int] = (),
             stats: Counter | None = None) -> Nomination:
    """Top-``k`` answers of ``model`` for a target-KG query.

    Foreign models see the query through the alignment and their answers are
    mapped back; answers without a counterpart are dropped before the
    cut-off. Entities in ``exclude`` (target coordinates) are skipped too.
    ``k=None`` keeps the full ranking.
    """
    exclude = set(exclude)
    if model == target:
        order, scores = space.rank_candidates(target, query)
        pairs = zip(order.tolist(), scores.tolist())
    else:
        amap = _map_for(maps, target, model)
        moved = transfer_query(query, amap, kgs[target], kgs[model], stats)
        if moved is None:
            return Nomination(model, query, [], [], k)
        order, scores = space.rank_candidates(model, moved)
        back = amap.mapping(model)
        pairs = ((back[e], s) for e, s in zip(order.tolist(), scores.tolist()) if e in back)
    cands, vals = [], []
    for e, s in pairs:
        if e in exclude:
            continue
        cands.append(e)
        vals.append(s)
        if k is not None and len(cands) == k:
            break
    return Nomination(model, query, cands, vals, k)


class KnowledgeEnsemble(BaseEstimator):
    """Fact prediction on one target KG by ensembling all KGs' models.

    ``fit`` takes a fitted :class:`~kens.train.JointEmbedding` (or a
    ``(kgs, space, alignments)`` tuple), predicts the entity alignment of the
    target with every other KG, measures each model's validation MRR on the
    target, and in ``boost`` mode learns per-entity model weights from the
    target's validation split.
    """

    def __init__(self, target=None, mode=BOOST, k=10, csls_k=DEFAULT_CSLS_K, matching="greedy",
                 epsilon=DEFAULT_EPSILON, direction=TAIL, filter_train=True):
        self.target = target
        self.mode = mode
        self.k = k
        self.csls_k = csls_k
        self.matching = matching
        self.epsilon = epsilon
        self.direction = direction
        self.filter_train = filter_train

    def fit(self, X, maps=None):
        if isinstance(X, tuple):
            kgs, space, stores = X
        else:
            check_is_fitted(X, "space_")
            kgs, space, stores = X.kgs_, X.space_, X.alignments_
        if self.mode not in MODES + (SINGLE,):
            raise ValueError(f"mode must be one of {MODES + (SINGLE,)}, got {self.mode!r}")
        if self.direction not in ("tail", "head", "both"):
            raise ValueError(f"direction must be tail, head or both, got {self.direction!r}")
        self.kgs_ = {kg.kg_id: kg for kg in kgs}
        self.models_ = [kg.kg_id for kg in kgs]
        self.target_ = self.target if self.target is not None else min(
            self.models_, key=lambda m: self.kgs_[m].n_entities)
        if self.target_ not in self.kgs_:
            raise KeyError(f"unknown target KG {self.target_!r}")
        self.space_ = space
        stores = dict(stores) if isinstance(stores, Mapping) else {(s.kg_a, s.kg_b): s for s in stores}
        self.maps_ = {}
        for model in self.models_:
            if model == self.target_:
                continue
            if maps is not None and ((self.target_, model) in maps or (model, self.target_) in maps):
                self.maps_[(self.target_, model)] = _map_for(maps, self.target_, model)
                continue
            store = stores.get((self.target_, model)) or stores.get((model, self.target_))
            self.maps_[(self.target_, model)] = align_pair(
                space, self.target_, model, store, k=self.csls_k, method=self.matching)
        self.transfer_stats_ = Counter()
        self.u_ = self._validation_mrr()
        self.entity_weights_ = {}
        if self.mode == BOOST:
            valid = self.kgs_[self.target_].valid
            for direction in self._directions():
                col = 0 if direction == TAIL else 2
                for e in sorted(set(valid[:, col].tolist())):
                    self.entity_weights_[(direction, e)] = self.boost_weights(e, direction)
        return self

    def _directions(self):
        return ("tail", "head") if self.direction == "both" else (self.direction,)

    def _exclude(self, query: Query, keep=()) -> set:
        if not self.filter_train:
            return set()
        known = self.kgs_[self.target_].answers("train", query.direction).get(
            (query.entity, query.relation), set())
        return known - set(keep)

    def nominate(self, model: str, query: Query, exclude=(), k="default") -> Nomination:
        check_is_fitted(self, "maps_")
        k = self.k if k == "default" else k
        return nominate(model, query, self.target_, self.kgs_, self.space_, self.maps_, k,
                        exclude, self.transfer_stats_)

    def nominations(self, query: Query, exclude=()) -> list[Nomination]:
        return [self.nominate(m, query, exclude) for m in self.models_]

    def _validation_mrr(self) -> dict[str, float]:
        kg = self.kgs_[self.target_]
        if len(kg.valid) == 0:
            logger.warning("%s has no validation triples; MRR weights default to 1", kg.kg_id)
            return {m: 1.0 for m in self.models_}
        u = {}
        for model in self.models_:
            ranks = []
            cache = {}
            for direction in self._directions():
                for h, r, t in kg.valid.tolist():
                    anchor, truth = (h, t) if direction == TAIL else (t, h)
                    q = Query(anchor, r, direction)
                    if q not in cache:
                        cache[q] = self.nominate(model, q, self._exclude(q), k=None).candidates
                    ranks.append(filtered_rank(cache[q], truth))
            u[model] = mrr(ranks)
        return u

    def boost_weights(self, entity: int, direction: str = TAIL) -> EntityWeights:
        """Learn model weights for queries anchored at ``entity``.

        Falls back to the validation-MRR weights when the entity has no
        validation queries or no critical pairs.
        """
        kg = self.kgs_[self.target_]
        pairs, columns = [], [[] for _ in self.models_]
        for answer_set in build_validation_queries(entity, kg.valid, direction):
            q = answer_set.query
            noms = self.nominations(q, self._exclude(q))
            pool = set(answer_set.answers)
            for nom in noms:
                pool.update(nom.candidates)
            crit = critical_pairs(pool, answer_set.answers)
            pairs.extend((q.relation,) + p for p in crit)
            for col, nom in zip(columns, noms):
                col.extend(pair_order(nom.candidates, p) for p in crit)
        if not pairs:
            return EntityWeights(entity, dict(self.u_), fallback=True)
        state = boost(np.array(columns, dtype=float), self.models_, self.epsilon)
        return EntityWeights(entity, state.final_weights(), state=state, pairs=pairs)

    def weights_for(self, query: Query, mode=None) -> dict[str, float]:
        mode = mode or self.mode
        if mode == VOTE:
            return {m: 1.0 for m in self.models_}
        if mode == MRR:
            return dict(self.u_)
        if mode == BOOST:
            found = self.entity_weights_.get((query.direction, query.entity))
            return found.weights if found is not None else dict(self.u_)
        raise ValueError(f"unknown mode {mode!r}")

    def rank(self, query: Query, exclude=(), mode=None) -> Ranking:
        """Final top-K ranking for a target-KG query."""
        check_is_fitted(self, "maps_")
        query.check(self.kgs_[self.target_])
        mode = mode or self.mode
        if mode == SINGLE:
            nom = self.nominate(self.target_, query, exclude)
            return Ranking(nom.candidates, nom.scores,
                           None if nom.candidates else "no candidates")
        ranking = combine(self.nominations(query, exclude), self.weights_for(query, mode),
                          self.u_, self.k)
        if ranking.reason:
            logger.debug("empty ensemble ranking for %s: %s", query, ranking.reason)
        return ranking

    def predict(self, queries, mode=None) -> list[list[int]]:
        """Top-K entity lists for ``(entity, relation)`` pairs or :class:`Query` objects."""
        out = []
        for q in queries:
            if not isinstance(q, Query):
                q = Query(int(q[0]), int(q[1]), self._directions()[0])
            out.append(self.rank(q, mode=mode).entities)
        return out
