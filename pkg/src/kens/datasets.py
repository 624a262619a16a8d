"""Small synthetic knowledge graphs for tests, demos and sanity experiments."""

from __future__ import annotations

import numpy as np

from .kg import KnowledgeGraph, SeedAlignment


def make_grid_kg(n=7, kg_id="grid") -> KnowledgeGraph:
    """``n x n`` lattice with right/up relations and their two-step versions.

    Every relation is a pure translation, so both TransE and RotatE can fit
    the graph exactly.
    """
    moves = {"right": (0, 1), "up": (1, 0), "right2": (0, 2), "up2": (2, 0)}
    triples = []
    for i in range(n):
        for j in range(n):
            for r, (di, dj) in enumerate(moves.values()):
                if i + di < n and j + dj < n:
                    triples.append((i * n + j, r, (i + di) * n + j + dj))
    entities = [f"{kg_id}:{i}_{j}" for i in range(n) for j in range(n)]
    return KnowledgeGraph(kg_id, entities, list(moves), train=triples)


def make_random_kg(n_entities=40, n_relations=4, n_triples=150, seed=0, kg_id="rand") -> KnowledgeGraph:
    rng = np.random.default_rng(seed)
    triples = set()
    while len(triples) < n_triples:
        triples.add(tuple(int(x) for x in (
            rng.integers(n_entities), rng.integers(n_relations), rng.integers(n_entities))))
    return KnowledgeGraph(
        kg_id, [f"{kg_id}:e{i}" for i in range(n_entities)],
        [f"r{i}" for i in range(n_relations)], train=sorted(triples),
    )


def _build_kg(kg_id, facts, n_relations):
    ents, rows = {}, []
    rels = {f"rel{r}": r for r in range(n_relations)}
    for h, r, t in facts:
        hi = ents.setdefault(f"{kg_id}:e{h}", len(ents))
        ri = rels[f"rel{r}"]
        ti = ents.setdefault(f"{kg_id}:e{t}", len(ents))
        rows.append((hi, ri, ti))
    return KnowledgeGraph(kg_id, list(ents), list(rels), train=rows)


def make_complementary_kgs(n_entities=120, n_relations=3, facts_per_entity=6,
                           share=(0.25, 0.5, 0.5), seed_fraction=0.4,
                           kg_ids=("el", "ja", "en"), seed=0):
    """KGs that each know one third of a shared fact universe in full.

    The universe has ``n_entities * facts_per_entity`` random facts. KG ``i``
    holds every fact whose head lies in the ``i``-th third of the entities,
    plus a ``share[i]`` fraction of the remaining facts; the first KG is the
    sparsest. Seed alignments cover ``seed_fraction`` of the entities shared
    by each pair.

    Returns ``(kgs, seeds, truth)`` where ``truth[(a, b)]`` is the complete
    true alignment as a dict of entity indices.
    """
    if len(share) != len(kg_ids):
        raise ValueError("need one share value per KG")
    rng = np.random.default_rng(seed)
    facts = set()
    target = n_entities * facts_per_entity
    while len(facts) < target:
        h, t = rng.integers(n_entities, size=2)
        if h != t:
            facts.add((int(h), int(rng.integers(n_relations)), int(t)))
    facts = sorted(facts)
    owner = np.array_split(rng.permutation(n_entities), len(kg_ids))
    owner_of = {int(e): i for i, group in enumerate(owner) for e in group}
    kgs = []
    for i, kg_id in enumerate(kg_ids):
        keep = [f for f in facts if owner_of[f[0]] == i or rng.random() < share[i]]
        kgs.append(_build_kg(kg_id, keep, n_relations))

    seeds, truth = [], {}
    for a in range(len(kgs)):
        for b in range(a + 1, len(kgs)):
            ka, kb = kgs[a], kgs[b]
            common = sorted(
                {e.split(":", 1)[1] for e in ka.entities} & {e.split(":", 1)[1] for e in kb.entities},
                key=lambda s: int(s[1:]),
            )
            pairs = [(ka.entity_index[f"{ka.kg_id}:{c}"], kb.entity_index[f"{kb.kg_id}:{c}"]) for c in common]
            truth[(ka.kg_id, kb.kg_id)] = dict(pairs)
            chosen = rng.permutation(len(pairs))[: int(round(seed_fraction * len(pairs)))]
            store = SeedAlignment(ka.kg_id, kb.kg_id, [pairs[j] for j in sorted(chosen)])
            store.coverage = len(store) / min(ka.n_entities, kb.n_entities)
            seeds.append(store)
    return kgs, seeds, truth


def make_bilingual_space(n=50, dim=32, noise=0.05, seed=0):
    """Entity tables of two KGs whose true counterparts are noisy copies.

    Returns ``(table_a, table_b, perm)`` with ``table_b[perm[i]]`` the
    counterpart of ``table_a[i]``.
    """
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n, dim)) / np.sqrt(dim)
    perm = rng.permutation(n)
    b = np.empty_like(a)
    b[perm] = a + rng.normal(scale=noise, size=a.shape)
    return a, b, perm
