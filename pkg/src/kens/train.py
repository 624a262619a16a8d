"""Joint training of per-KG knowledge models and pairwise alignment models."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, fields
from itertools import combinations
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .align import propose_mutual_nn
from .exceptions import ConfigError, SamplingError, TrainingDivergedError
from .kg import KnowledgeGraph, SeedAlignment
from .models import ROTATE, TRANSE, alignment_loss_grad, get_model, knowledge_loss_grad
from .optim import SparseAdam
from .space import EmbeddingSpace

logger = logging.getLogger(__name__)

# tuned settings per model kind: learning rate, dimension, batch size
MODEL_DEFAULTS = {
    TRANSE: {"learning_rate": 0.001, "dim": 300, "batch_size": 256},
    ROTATE: {"learning_rate": 0.01, "dim": 200, "batch_size": 512},
}


@dataclass
class TrainConfig:
    model: str = TRANSE
    learning_rate: float | None = None
    dim: int | None = None
    batch_size: int | None = None
    margin: float = 0.3
    align_weight: float = 1.0
    l2: float = 1e-4
    n_negatives: int = 1
    epochs: int = 100
    self_learning: bool = True
    self_learning_period: int = 5
    self_learning_warmup: int = 10
    csls_k: int = 10
    seed: int = 0
    max_retries: int = 100

    def resolved(self) -> "TrainConfig":
        """Copy with model-specific defaults filled in, validated."""
        kind = str(self.model).lower()
        if kind not in MODEL_DEFAULTS:
            raise ConfigError("model", f"unknown model kind {self.model!r}")
        values = asdict(self)
        values["model"] = kind
        for key, default in MODEL_DEFAULTS[kind].items():
            if values[key] is None:
                values[key] = default
        cfg = TrainConfig(**values)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        for name in ("learning_rate", "dim", "batch_size", "margin", "n_negatives",
                     "epochs", "self_learning_period", "csls_k", "max_retries"):
            value = getattr(self, name)
            if value is None or not value > 0:
                raise ConfigError(name, f"must be positive, got {value!r}")
        for name in ("align_weight", "l2", "self_learning_warmup"):
            value = getattr(self, name)
            if not value >= 0:
                raise ConfigError(name, f"must be non-negative, got {value!r}")

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"train.{sorted(unknown)[0]}", "unknown option")
        return cls(**data)


def _triple_keys(triples, n_entities, n_relations):
    t = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    return (t[:, 0] * n_relations + t[:, 1]) * n_entities + t[:, 2]


def sample_negatives(triples, kg: KnowledgeGraph, rng, side=None, max_retries=100,
                     known_keys=None) -> np.ndarray:
    """Corrupt the head or tail of every row with a uniformly drawn entity.

    A corruption is redrawn while it equals the original triple or appears
    in the training split. ``side`` forces ``"head"`` or ``"tail"``;
    by default each row flips a fair coin.
    """
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    n = len(triples)
    if kg.n_entities < 2:
        raise SamplingError(f"{kg.kg_id}: negative sampling needs at least 2 entities")
    if known_keys is None:
        known_keys = np.sort(_triple_keys(kg.train, kg.n_entities, kg.n_relations))
    if side is None:
        col = np.where(rng.random(n) < 0.5, 0, 2)
    else:
        col = np.full(n, 0 if side == "head" else 2)
    out = triples.copy()
    pending = np.arange(n)
    for _ in range(max_retries):
        out[pending, col[pending]] = rng.integers(0, kg.n_entities, len(pending))
        cand = out[pending]
        keys = _triple_keys(cand, kg.n_entities, kg.n_relations)
        bad = np.isin(keys, known_keys) | (cand == triples[pending]).all(axis=1)
        pending = pending[bad]
        if len(pending) == 0:
            return out
    raise SamplingError(
        f"{kg.kg_id}: could not find an unseen corruption for {len(pending)} triples "
        f"after {max_retries} retries"
    )


def sample_negative(triple, kg: KnowledgeGraph, rng, side=None, max_retries=100):
    return tuple(int(x) for x in sample_negatives([triple], kg, rng, side, max_retries)[0])


def _l2(table, rows, grad, coef):
    if coef == 0:
        return 0.0
    sub = table[rows]
    grad += 2.0 * coef * sub
    return coef * float(np.sum(sub * sub))


def train_joint(kgs: Sequence[KnowledgeGraph], seeds: Sequence[SeedAlignment] = (),
                cfg: TrainConfig | None = None, callback=None):
    """Train all KGs in one space with alternating knowledge/alignment batches.

    Every epoch walks each KG's training triples once in shuffled batches.
    Step ``s`` runs batch ``s`` of every KG that still has one, then one
    alignment batch per aligned KG pair, each scaled by ``align_weight``.
    Self-learning adds mutual CSLS neighbours to the alignment stores every
    ``self_learning_period`` epochs once ``self_learning_warmup`` is reached.

    Returns ``(space, stores, trace)``; ``stores`` maps ``(kg_a, kg_b)`` to a
    grown copy of the seed alignment.
    """
    cfg = (cfg or TrainConfig()).resolved()
    if not kgs:
        raise ValueError("need at least one KG")
    ids = [kg.kg_id for kg in kgs]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate KG ids: {ids}")
    by_id = {kg.kg_id: kg for kg in kgs}
    model = get_model(cfg.model)

    stores: dict[tuple[str, str], SeedAlignment] = {}
    for store in seeds:
        if store.kg_a not in by_id or store.kg_b not in by_id:
            raise ValueError(f"alignment {store.kg_a}<->{store.kg_b} refers to an unknown KG")
        stores[(store.kg_a, store.kg_b)] = store.copy()
    pair_keys = [key for key in combinations(ids, 2) if key in stores or key[::-1] in stores]
    pair_keys = [key if key in stores else key[::-1] for key in pair_keys]

    root = np.random.SeedSequence(cfg.seed)
    kg_rngs = [np.random.default_rng(s) for s in root.spawn(len(kgs))]
    pair_rngs = [np.random.default_rng(s) for s in root.spawn(len(pair_keys))]

    space = EmbeddingSpace(cfg.model, cfg.dim)
    ent_opt, rel_opt, known = {}, {}, {}
    for kg, rng in zip(kgs, kg_rngs):
        ent, rel = model.init_tables(rng, kg.n_entities, kg.n_relations, cfg.dim)
        space.add_kg(kg.kg_id, kg.entities, kg.relations, ent, rel)
        ent_opt[kg.kg_id] = SparseAdam(ent.shape, lr=cfg.learning_rate)
        rel_opt[kg.kg_id] = SparseAdam(rel.shape, lr=cfg.learning_rate)
        known[kg.kg_id] = np.sort(_triple_keys(kg.train, kg.n_entities, kg.n_relations))

    # RotatE phases are not regularized: their scale carries no capacity
    reg_relations = cfg.model == TRANSE
    b = cfg.batch_size
    trace = []
    for epoch in range(1, cfg.epochs + 1):
        k_loss = {kg.kg_id: 0.0 for kg in kgs}
        a_loss = 0.0
        perms = [rng.permutation(len(kg.train)) for kg, rng in zip(kgs, kg_rngs)]
        n_batches = [math.ceil(len(kg.train) / b) for kg in kgs]
        pair_data = []
        for key, rng in zip(pair_keys, pair_rngs):
            pairs = stores[key].pairs()
            pair_data.append((key, pairs, rng.permutation(len(pairs))))
        for step in range(max(n_batches, default=0)):
            for kg, rng, perm, nb in zip(kgs, kg_rngs, perms, n_batches):
                if step >= nb:
                    continue
                kid = kg.kg_id
                batch = kg.train[perm[step * b:(step + 1) * b]]
                pos = np.repeat(batch, cfg.n_negatives, axis=0)
                neg = sample_negatives(pos, kg, rng, max_retries=cfg.max_retries, known_keys=known[kid])
                ent, rel = space.entities[kid], space.relations[kid]
                loss, (e_rows, e_grad), (r_rows, r_grad) = knowledge_loss_grad(
                    model, ent, rel, pos, neg, cfg.margin)
                loss += _l2(ent, e_rows, e_grad, cfg.l2)
                if reg_relations:
                    loss += _l2(rel, r_rows, r_grad, cfg.l2)
                ent_opt[kid].step(ent, e_rows, e_grad)
                rel_opt[kid].step(rel, r_rows, r_grad)
                k_loss[kid] += loss
            if cfg.align_weight == 0:
                continue
            for (ka, kb), pairs, perm in pair_data:
                if len(pairs) == 0:
                    continue
                take = min(b, len(pairs))
                sel = pairs[perm[(step * take + np.arange(take)) % len(pairs)]]
                ent_a, ent_b = space.entities[ka], space.entities[kb]
                loss, g_a, g_b = alignment_loss_grad(ent_a, ent_b, sel)
                loss *= cfg.align_weight
                g_a *= cfg.align_weight
                g_b *= cfg.align_weight
                rows_a, rows_b = sel[:, 0], sel[:, 1]
                loss += _l2(ent_a, rows_a, g_a, cfg.l2) + _l2(ent_b, rows_b, g_b, cfg.l2)
                ent_opt[ka].step(ent_a, rows_a, g_a)
                ent_opt[kb].step(ent_b, rows_b, g_b)
                a_loss += loss

        total_k = sum(k_loss.values())
        if not (math.isfinite(total_k) and math.isfinite(a_loss)) or not space.all_finite():
            raise TrainingDivergedError(
                f"non-finite loss at epoch {epoch} (knowledge={total_k}, alignment={a_loss}); "
                f"learning rate {cfg.learning_rate} is probably too high"
            )

        added = 0
        if (cfg.self_learning and epoch >= cfg.self_learning_warmup
                and (epoch - cfg.self_learning_warmup) % cfg.self_learning_period == 0):
            for ka, kb in pair_keys:
                store = stores[(ka, kb)]
                if len(store.pairs(SeedAlignment.SEED)) == 0:
                    continue
                new = propose_mutual_nn(space.entities[ka], space.entities[kb], store, k=cfg.csls_k)
                added += len(new)

        row = {"epoch": epoch, "knowledge_loss": total_k, "alignment_loss": a_loss,
               "self_learned": added}
        row.update({f"knowledge_loss:{k}": v for k, v in k_loss.items()})
        trace.append(row)
        logger.debug("epoch %d knowledge=%.4f alignment=%.4f self-learned=%d",
                     epoch, total_k, a_loss, added)
        if callback is not None:
            callback(epoch, space, stores)
    return space, stores, trace


class JointEmbedding(BaseEstimator):
    """Embed several KGs in one space and align them.

    ``fit(kgs, alignments)`` takes a list of :class:`KnowledgeGraph` and a
    list of :class:`SeedAlignment`. Fitted attributes: ``space_``,
    ``alignments_`` (grown copies of the seeds), ``loss_trace_``, ``kgs_``.
    """

    def __init__(self, model=TRANSE, dim=None, learning_rate=None, batch_size=None,
                 margin=0.3, align_weight=1.0, l2=1e-4, n_negatives=1, epochs=100,
                 self_learning=True, self_learning_period=5, self_learning_warmup=10,
                 csls_k=10, seed=0, max_retries=100):
        self.model = model
        self.dim = dim
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.margin = margin
        self.align_weight = align_weight
        self.l2 = l2
        self.n_negatives = n_negatives
        self.epochs = epochs
        self.self_learning = self_learning
        self.self_learning_period = self_learning_period
        self.self_learning_warmup = self_learning_warmup
        self.csls_k = csls_k
        self.seed = seed
        self.max_retries = max_retries

    def get_config(self) -> TrainConfig:
        return TrainConfig(**self.get_params()).resolved()

    def fit(self, kgs, alignments=()):
        cfg = self.get_config()
        self.space_, self.alignments_, self.loss_trace_ = train_joint(kgs, alignments, cfg)
        self.kgs_ = list(kgs)
        return self

    def transform(self, kg_id):
        """Entity table of ``kg_id`` in the shared space."""
        check_is_fitted(self, "space_")
        return self.space_.entities[kg_id]

    def score_triples(self, kg_id, triples):
        check_is_fitted(self, "space_")
        return self.space_.score_triples(kg_id, triples)
