"""Filtered ranking metrics and per-KG evaluation reports."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

from .exceptions import MetricError
from .kg import TAIL, Query

DEFAULT_KS = (1, 3, 10)


def filtered_rank(ranked: Sequence[int], truth: int, filter: Iterable[int] = ()) -> int | None:
    """1-based position of ``truth`` after dropping filtered competitors.

    Returns None when ``truth`` is not in the list.
    """
    drop = set(filter)
    drop.discard(truth)
    pos = 0
    for e in ranked:
        if e in drop:
            continue
        pos += 1
        if e == truth:
            return pos
    return None


def hits_at_k(ranks: Sequence[int | None], k: int) -> float:
    """Fraction of queries ranked within the top ``k``; missing ranks are misses."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if len(ranks) == 0:
        raise MetricError("Hits@K is undefined without queries")
    return sum(1 for r in ranks if r is not None and r <= k) / len(ranks)


def mrr(ranks: Sequence[int | None]) -> float:
    """Mean reciprocal rank; a missing rank contributes 0."""
    if len(ranks) == 0:
        raise MetricError("MRR is undefined without queries")
    return sum(1.0 / r for r in ranks if r is not None) / len(ranks)


@dataclass
class EvalReport:
    kg: str
    mode: str
    direction: str
    hits: dict[str, float]
    n_queries: int
    u: dict[str, float] = field(default_factory=dict)
    runtime_seconds: float = 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    TSV_HEADER = "kg\tmode\tdirection\tn_queries\thits@1\thits@3\thits@10"

    def to_tsv_row(self) -> str:
        hits = [f"{self.hits.get(str(k), float('nan')):.6f}" for k in DEFAULT_KS]
        return "\t".join([self.kg, self.mode, self.direction, str(self.n_queries), *hits])


def evaluate_kg(ensemble, mode: str | None = None, ks: Sequence[int] = DEFAULT_KS,
                split: str = "test") -> EvalReport:
    """Filtered Hits@K of a fitted :class:`~kens.ensemble.KnowledgeEnsemble`.

    Each triple of ``split`` is one query; other answers known from the
    target's training split are filtered out. ``mode="single"`` evaluates
    the target's own model alone.
    """
    start = time.perf_counter()
    mode = mode or ensemble.mode
    kg = ensemble.kgs_[ensemble.target_]
    triples = kg.split(split)
    if len(triples) == 0:
        raise MetricError(f"{kg.kg_id} has an empty {split} split")
    directions = ensemble._directions()
    ranks = []
    for direction in directions:
        for h, r, t in triples.tolist():
            anchor, truth = (h, t) if direction == TAIL else (t, h)
            q = Query(anchor, r, direction)
            exclude = ensemble._exclude(q, keep=(truth,))
            ranking = ensemble.rank(q, exclude=exclude, mode=mode)
            ranks.append(filtered_rank(ranking.entities, truth, exclude))
    hits = {str(k): hits_at_k(ranks, k) for k in ks}
    return EvalReport(
        kg=kg.kg_id,
        mode=mode,
        direction=ensemble.direction,
        hits=hits,
        n_queries=len(ranks),
        u=dict(ensemble.u_),
        runtime_seconds=time.perf_counter() - start,
    )
