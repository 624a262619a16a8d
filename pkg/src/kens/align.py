"""CSLS similarity, self-learned alignment, 1-to-1 matching and query transfer."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .exceptions import SimilarityError
from .kg import KnowledgeGraph, Query, SeedAlignment

logger = logging.getLogger(__name__)

DEFAULT_CSLS_K = 10


def _unit_rows(x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0):
        raise SimilarityError("cosine similarity is undefined for a zero vector")
    return x / norms[:, None]


def cosine_matrix(a, b):
    return _unit_rows(a) @ _unit_rows(b).T


def _check_k(k, n):
    if k < 1:
        raise ValueError(f"CSLS neighbourhood size must be >= 1, got {k}")
    if k > n:
        raise ValueError(f"CSLS neighbourhood size {k} exceeds table size {n}")


def neighbourhood_similarity(queries, table, k):
    """Mean cosine from each query row to its ``k`` most similar rows of ``table``."""
    table = np.atleast_2d(table)
    _check_k(k, len(table))
    sims = cosine_matrix(queries, table)
    top = -np.partition(-sims, k - 1, axis=1)[:, :k]
    return top.mean(axis=1)


def csls_matrix(table_a, table_b, k=DEFAULT_CSLS_K):
    """CSLS between every row of ``table_a`` and every row of ``table_b``.

    ``2 cos(x, y) - r_b(x) - r_a(y)`` where ``r_b(x)`` is the mean cosine of
    ``x`` to its ``k`` nearest rows of ``table_b`` (and vice versa).
    """
    _check_k(k, min(len(table_a), len(table_b)))
    cos = cosine_matrix(table_a, table_b)
    r_a = (-np.partition(-cos, k - 1, axis=1)[:, :k]).mean(axis=1)
    r_b = (-np.partition(-cos.T, k - 1, axis=1)[:, :k]).mean(axis=1)
    return 2 * cos - (r_a[:, None] + r_b[None, :])


def csls(e_a, e_b, table_a, table_b, k=DEFAULT_CSLS_K) -> float:
    """CSLS between vector ``e_a`` (of the KG owning ``table_a``) and ``e_b``.

    Symmetric: ``csls(x, y, A, B) == csls(y, x, B, A)`` exactly.
    """
    cos = float(cosine_matrix(e_a, e_b)[0, 0])
    r_a = float(neighbourhood_similarity(e_a, table_b, k)[0])
    r_b = float(neighbourhood_similarity(e_b, table_a, k)[0])
    return 2 * cos - (r_a + r_b)


def propose_mutual_nn(table_a, table_b, existing: SeedAlignment, k=DEFAULT_CSLS_K, add=True):
    """Mutual CSLS nearest neighbours among currently unaligned entities.

    Returns the new ``(a, b)`` pairs; with ``add`` they are also inserted into
    ``existing`` tagged as self-learned. Pairs are never retracted.
    """
    free_a = np.setdiff1d(np.arange(len(table_a)), list(existing.a_to_b))
    free_b = np.setdiff1d(np.arange(len(table_b)), list(existing.b_to_a))
    if len(free_a) == 0 or len(free_b) == 0:
        return np.empty((0, 2), dtype=np.int64)
    k = min(k, len(table_a), len(table_b))
    sim = csls_matrix(table_a, table_b, k)[np.ix_(free_a, free_b)]
    best_b = sim.argmax(axis=1)
    best_a = sim.argmax(axis=0)
    rows = np.flatnonzero(best_a[best_b] == np.arange(len(free_a)))
    pairs = np.stack([free_a[rows], free_b[best_b[rows]]], axis=1).astype(np.int64)
    if add:
        for a, b in pairs:
            existing.add(a, b, SeedAlignment.SELF_LEARNED)
    return pairs


@dataclass
class AlignmentMap:
    """1-to-1 entity map from the smaller KG into the larger one."""

    kg_small: str
    kg_large: str
    forward: dict[int, int] = field(default_factory=dict)
    backward: dict[int, int] = field(default_factory=dict)
    unmatched: list[int] = field(default_factory=list)
    similarity: dict[int, float] = field(default_factory=dict)
    provenance: dict[int, str] = field(default_factory=dict)

    def mapping(self, from_kg: str) -> dict[int, int]:
        if from_kg == self.kg_small:
            return self.forward
        if from_kg == self.kg_large:
            return self.backward
        raise KeyError(f"{from_kg!r} is not part of alignment {self.kg_small}<->{self.kg_large}")

    def other(self, kg_id: str) -> str:
        return self.kg_large if kg_id == self.kg_small else self.kg_small

    def inverse(self) -> "AlignmentMap":
        return AlignmentMap(self.kg_large, self.kg_small, dict(self.backward), dict(self.forward))

    def write_tsv(self, path, small_ids, large_ids) -> None:
        from .space import atomic_write_text

        rows = []
        for s, l in sorted(self.forward.items()):
            rows.append(
                f"{small_ids[s]}\t{large_ids[l]}\t{self.similarity.get(s, float('nan')):.6f}\t"
                f"{self.provenance.get(s, 'predicted')}\n"
            )
        atomic_write_text(path, "".join(rows))


def _greedy_assign(sim):
    order = np.argsort(-sim, axis=None, kind="stable")
    n_rows, n_cols = sim.shape
    row_taken = np.zeros(n_rows, bool)
    col_taken = np.zeros(n_cols, bool)
    out = []
    target = min(n_rows, n_cols)
    for flat in order:
        i, j = divmod(int(flat), n_cols)
        if row_taken[i] or col_taken[j]:
            continue
        row_taken[i] = col_taken[j] = True
        out.append((i, j))
        if len(out) == target:
            break
    return out


def predict_alignment(
    table_small,
    table_large,
    kg_small: str = "small",
    kg_large: str = "large",
    fixed: dict[int, int] | None = None,
    fixed_provenance: dict[int, str] | None = None,
    k=DEFAULT_CSLS_K,
    method="greedy",
) -> AlignmentMap:
    """Match every entity of the smaller KG to one of the larger KG by CSLS.

    ``fixed`` (small -> large) pairs are kept as-is and removed from
    contention. Remaining conflicts are resolved greedily by descending
    similarity; ``method="hungarian"`` solves the global assignment instead.
    """
    if len(table_small) > len(table_large):
        raise ValueError("table_small has more entities than table_large; orient the pair first")
    fixed = dict(fixed or {})
    fixed_provenance = fixed_provenance or {}
    k = min(k, len(table_small), len(table_large))
    sim = csls_matrix(table_small, table_large, k)
    amap = AlignmentMap(kg_small, kg_large)
    for s, l in fixed.items():
        amap.forward[s] = l
        amap.similarity[s] = float(sim[s, l])
        amap.provenance[s] = fixed_provenance.get(s, SeedAlignment.SEED)
    free_s = np.setdiff1d(np.arange(len(table_small)), list(fixed))
    free_l = np.setdiff1d(np.arange(len(table_large)), list(fixed.values()))
    if len(free_s) and len(free_l):
        sub = sim[np.ix_(free_s, free_l)]
        if method == "greedy":
            assigned = _greedy_assign(sub)
        elif method == "hungarian":
            rows, cols = linear_sum_assignment(sub, maximize=True)
            assigned = list(zip(rows.tolist(), cols.tolist()))
        else:
            raise ValueError(f"unknown matching method {method!r}")
        for i, j in assigned:
            s, l = int(free_s[i]), int(free_l[j])
            amap.forward[s] = l
            amap.similarity[s] = float(sub[i, j])
            amap.provenance[s] = "predicted"
    amap.forward = dict(sorted(amap.forward.items()))
    amap.backward = {l: s for s, l in amap.forward.items()}
    amap.unmatched = sorted(set(range(len(table_large))) - set(amap.backward))
    return amap


def align_pair(space, kg_a: str, kg_b: str, store: SeedAlignment | None = None,
               k=DEFAULT_CSLS_K, method="greedy") -> AlignmentMap:
    """Orient ``kg_a``/``kg_b`` by entity count and run :func:`predict_alignment`."""
    n_a, n_b = len(space.entities[kg_a]), len(space.entities[kg_b])
    small, large = (kg_a, kg_b) if n_a <= n_b else (kg_b, kg_a)
    fixed, prov = {}, {}
    if store is not None:
        fixed = dict(store.oriented(small))
        for (a, b), tag in store.provenance.items():
            prov[a if small == store.kg_a else b] = tag
    return predict_alignment(
        space.entities[small], space.entities[large], small, large,
        fixed=fixed, fixed_provenance=prov, k=k, method=method,
    )


def transfer_query(q: Query, amap: AlignmentMap, source: KnowledgeGraph, dest: KnowledgeGraph,
                   stats: Counter | None = None) -> Query | None:
    """Move ``q`` from ``source`` into ``dest`` coordinates.

    Returns None when the anchor entity has no counterpart or the relation
    does not exist in ``dest``; ``stats`` (if given) counts the reason.
    """
    target = amap.mapping(source.kg_id).get(q.entity)
    if target is None:
        if stats is not None:
            stats["unmatched_entity"] += 1
        return None
    rel = dest.relation_index.get(source.relations[q.relation])
    if rel is None:
        if stats is not None:
            stats["unknown_relation"] += 1
        return None
    return Query(target, rel, q.direction)


def transfer_answers(ranked, amap: AlignmentMap, source: str) -> list[int]:
    """Map a ranked entity list out of ``source``, dropping unmatched entries."""
    mapping = amap.mapping(source)
    return [mapping[e] for e in ranked if e in mapping]
