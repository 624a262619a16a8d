"""Knowledge graph data model, TSV ingestion and dataset splitting.

Entities and relations are opaque UTF-8 strings. Each graph assigns them
integer indices in first-appearance order, and every triple is stored as an
``(head, relation, tail)`` row of indices.
"""

from __future__ import annotations

import logging
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .exceptions import EmptyGraphError, TripleParseError, UnknownEntityError

logger = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")
TAIL = "tail"
HEAD = "head"


def _frozen(triples) -> np.ndarray:
    arr = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(eq=False)
class KnowledgeGraph:
    """One language-specific KG.

    ``train``, ``valid`` and ``test`` are read-only ``(n, 3)`` int arrays.
    Instances are treated as immutable once built; use :meth:`with_splits`
    to derive a new graph.
    """

    kg_id: str
    entities: list[str]
    relations: list[str]
    train: np.ndarray = field(default_factory=lambda: _frozen([]))
    valid: np.ndarray = field(default_factory=lambda: _frozen([]))
    test: np.ndarray = field(default_factory=lambda: _frozen([]))
    n_lines: int = 0
    n_duplicates: int = 0

    def __post_init__(self):
        self.entities = list(self.entities)
        self.relations = list(self.relations)
        self.entity_index = {e: i for i, e in enumerate(self.entities)}
        self.relation_index = {r: i for i, r in enumerate(self.relations)}
        if len(self.entity_index) != len(self.entities):
            raise ValueError(f"{self.kg_id}: duplicate entity IDs in vocabulary")
        if len(self.relation_index) != len(self.relations):
            raise ValueError(f"{self.kg_id}: duplicate relation IDs in vocabulary")
        for name in SPLITS:
            arr = _frozen(getattr(self, name))
            if len(arr):
                if arr[:, [0, 2]].min() < 0 or arr[:, [0, 2]].max() >= len(self.entities):
                    raise ValueError(f"{self.kg_id}.{name}: entity index out of range")
                if arr[:, 1].min() < 0 or arr[:, 1].max() >= len(self.relations):
                    raise ValueError(f"{self.kg_id}.{name}: relation index out of range")
            setattr(self, name, arr)
        seen = [set(map(tuple, getattr(self, s).tolist())) for s in SPLITS]
        for i in range(3):
            for j in range(i + 1, 3):
                if seen[i] & seen[j]:
                    raise ValueError(
                        f"{self.kg_id}: splits {SPLITS[i]} and {SPLITS[j]} overlap"
                    )
        self._answer_cache = {}

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def split(self, name: str) -> np.ndarray:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)

    def all_triples(self) -> np.ndarray:
        return np.concatenate([self.train, self.valid, self.test])

    def with_splits(self, train, valid=(), test=()) -> "KnowledgeGraph":
        return KnowledgeGraph(
            self.kg_id, self.entities, self.relations,
            train=train, valid=valid, test=test,
            n_lines=self.n_lines, n_duplicates=self.n_duplicates,
        )

    def answers(self, split: str = "train", direction: str = TAIL) -> dict:
        """Map ``(anchor, relation)`` to the set of entities completing it.

        For tail direction the anchor is the head; for head direction it is
        the tail.
        """
        key = (split, direction)
        if key not in self._answer_cache:
            out = defaultdict(set)
            for h, r, t in self.split(split).tolist():
                if direction == TAIL:
                    out[(h, r)].add(t)
                else:
                    out[(t, r)].add(h)
            self._answer_cache[key] = dict(out)
        return self._answer_cache[key]

    def encode(self, head: str, relation: str, tail: str) -> tuple[int, int, int]:
        missing = [x for x in (head, tail) if x not in self.entity_index]
        if missing:
            raise UnknownEntityError(missing)
        return self.entity_index[head], self.relation_index[relation], self.entity_index[tail]

    def decode(self, triple) -> tuple[str, str, str]:
        h, r, t = (int(x) for x in triple)
        return self.entities[h], self.relations[r], self.entities[t]

    def __repr__(self):
        return (
            f"KnowledgeGraph({self.kg_id!r}, entities={self.n_entities}, "
            f"relations={self.n_relations}, train={len(self.train)}, "
            f"valid={len(self.valid)}, test={len(self.test)})"
        )


@dataclass(frozen=True)
class Query:
    """A link-prediction query.

    ``entity`` is the known end of the triple: the head for tail prediction
    ``(h, r, ?t)``, the tail for head prediction ``(?h, r, t)``.
    """

    entity: int
    relation: int
    direction: str = TAIL

    def __post_init__(self):
        if self.direction not in (TAIL, HEAD):
            raise ValueError(f"direction must be 'tail' or 'head', got {self.direction!r}")

    def check(self, kg: KnowledgeGraph) -> "Query":
        if not 0 <= self.entity < kg.n_entities:
            raise IndexError(f"entity {self.entity} out of range for {kg.kg_id}")
        if not 0 <= self.relation < kg.n_relations:
            raise IndexError(f"relation {self.relation} out of range for {kg.kg_id}")
        return self


@dataclass(frozen=True)
class AnswerSet:
    query: Query
    answers: frozenset

    def __post_init__(self):
        if not self.answers:
            raise ValueError("answer set must be non-empty")


class SeedAlignment:
    """1-to-1 store of entity pairs between two KGs.

    Pairs keep insertion order. Each pair carries a provenance tag,
    ``"seed"`` or ``"self-learned"``.
    """

    SEED = "seed"
    SELF_LEARNED = "self-learned"

    def __init__(self, kg_a: str, kg_b: str, pairs: Iterable = (), provenance: str = SEED):
        if kg_a == kg_b:
            raise ValueError("an alignment must connect two different KGs")
        self.kg_a = kg_a
        self.kg_b = kg_b
        self.a_to_b: dict[int, int] = {}
        self.b_to_a: dict[int, int] = {}
        self.provenance: dict[tuple[int, int], str] = {}
        self.conflicts = 0
        self.coverage = None
        for a, b in pairs:
            self.add(a, b, provenance)

    def add(self, a: int, b: int, provenance: str = SEED) -> bool:
        """Insert ``(a, b)``; return False (and count a conflict) if either side is taken."""
        a, b = int(a), int(b)
        if self.a_to_b.get(a) == b:
            return False
        if a in self.a_to_b or b in self.b_to_a:
            self.conflicts += 1
            return False
        self.a_to_b[a] = b
        self.b_to_a[b] = a
        self.provenance[(a, b)] = provenance
        return True

    def pairs(self, provenance: str | None = None) -> np.ndarray:
        rows = [p for p, tag in self.provenance.items() if provenance in (None, tag)]
        return np.asarray(rows, dtype=np.int64).reshape(-1, 2)

    def oriented(self, kg_from: str) -> dict[int, int]:
        if kg_from == self.kg_a:
            return self.a_to_b
        if kg_from == self.kg_b:
            return self.b_to_a
        raise KeyError(kg_from)

    def copy(self) -> "SeedAlignment":
        new = SeedAlignment(self.kg_a, self.kg_b)
        for (a, b), tag in self.provenance.items():
            new.add(a, b, tag)
        new.conflicts = self.conflicts
        new.coverage = self.coverage
        return new

    def __len__(self):
        return len(self.provenance)

    def __contains__(self, pair):
        return tuple(int(x) for x in pair) in self.provenance

    def __repr__(self):
        return f"SeedAlignment({self.kg_a!r}, {self.kg_b!r}, pairs={len(self)})"


def _iter_records(path, n_fields: int):
    with open(path, encoding="utf-8", newline="\n") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != n_fields:
                raise TripleParseError(path, lineno, line, expected=n_fields)
            yield lineno, fields


class _Vocab:
    def __init__(self):
        self.index: dict[str, int] = {}

    def __call__(self, key: str) -> int:
        idx = self.index.get(key)
        if idx is None:
            idx = self.index[key] = len(self.index)
        return idx

    def items(self) -> list[str]:
        return list(self.index)


def load_triples(path, kg_id: str) -> KnowledgeGraph:
    """Read a ``head<TAB>relation<TAB>tail`` file into the train split."""
    return load_splits({"train": path}, kg_id)


def load_splits(paths: Mapping[str, str | os.PathLike], kg_id: str) -> KnowledgeGraph:
    """Read pre-split triple files; vocabularies are shared across splits.

    A triple repeated inside one file is dropped with a counter; a triple
    that reappears in a later split is kept only in the first.
    """
    ents, rels = _Vocab(), _Vocab()
    seen: set[tuple[int, int, int]] = set()
    rows: dict[str, list] = {s: [] for s in SPLITS}
    n_lines = n_dup = 0
    for split in SPLITS:
        if split not in paths or paths[split] is None:
            continue
        for _, (h, r, t) in _iter_records(paths[split], 3):
            n_lines += 1
            triple = (ents(h), rels(r), ents(t))
            if triple in seen:
                n_dup += 1
                continue
            seen.add(triple)
            rows[split].append(triple)
    if not seen:
        raise EmptyGraphError(f"{kg_id}: no triples found in {dict(paths)}")
    if n_dup:
        logger.info("%s: dropped %d duplicate triples", kg_id, n_dup)
    return KnowledgeGraph(
        kg_id, ents.items(), rels.items(),
        train=rows["train"], valid=rows["valid"], test=rows["test"],
        n_lines=n_lines, n_duplicates=n_dup,
    )


def write_triples(kg: KnowledgeGraph, path, split: str = "train") -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for triple in kg.split(split):
            fh.write("\t".join(kg.decode(triple)) + "\n")


def load_alignment(path, kg_a: KnowledgeGraph, kg_b: KnowledgeGraph) -> SeedAlignment:
    """Read ``entityA<TAB>entityB`` lines into a 1-to-1 :class:`SeedAlignment`.

    Unknown IDs raise :class:`UnknownEntityError` listing all of them.
    A line that conflicts with an earlier pair is skipped and counted in
    ``SeedAlignment.conflicts``. ``coverage`` is the fraction of the smaller
    KG's entities that ended up aligned.
    """
    store = SeedAlignment(kg_a.kg_id, kg_b.kg_id)
    missing = []
    records = []
    for _, (a, b) in _iter_records(path, 2):
        ia, ib = kg_a.entity_index.get(a), kg_b.entity_index.get(b)
        if ia is None:
            missing.append(a)
        if ib is None:
            missing.append(b)
        records.append((ia, ib))
    if missing:
        raise UnknownEntityError(dict.fromkeys(missing))
    for ia, ib in records:
        store.add(ia, ib)
    if store.conflicts:
        logger.warning("%s: skipped %d conflicting alignment lines", path, store.conflicts)
    store.coverage = len(store) / min(kg_a.n_entities, kg_b.n_entities)
    return store


def write_alignment(store: SeedAlignment, kg_a: KnowledgeGraph, kg_b: KnowledgeGraph, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for a, b in store.pairs():
            fh.write(f"{kg_a.entities[a]}\t{kg_b.entities[b]}\n")


def split_sizes(n: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    _check_ratios(ratios)
    n_valid = int(round(n * ratios[1]))
    n_test = int(round(n * ratios[2]))
    n_train = max(n - n_valid - n_test, 0)
    return n_train, n_valid, n - n_train - n_valid


def _check_ratios(ratios):
    from .exceptions import ConfigError

    if len(ratios) != 3:
        raise ConfigError("ratios", f"need (train, valid, test), got {ratios!r}")
    if any(not (r > 0) for r in ratios):
        raise ConfigError("ratios", f"all ratios must be positive, got {ratios!r}")
    if abs(math.fsum(ratios) - 1.0) > 1e-9:
        raise ConfigError("ratios", f"must sum to 1, got {math.fsum(ratios)!r}")


def split_dataset(kg: KnowledgeGraph, ratios=(0.6, 0.3, 0.1), seed: int = 0) -> KnowledgeGraph:
    """Shuffle all triples of ``kg`` with ``seed`` and cut into train/valid/test.

    Valid and test sizes are rounded to the nearest integer; train absorbs
    the remainder.
    """
    triples = kg.all_triples()
    n_train, n_valid, _ = split_sizes(len(triples), ratios)
    order = np.random.default_rng(seed).permutation(len(triples))
    shuffled = triples[order]
    return kg.with_splits(
        train=shuffled[:n_train],
        valid=shuffled[n_train:n_train + n_valid],
        test=shuffled[n_train + n_valid:],
    )


@dataclass
class SchemaReport:
    usage: dict[str, list[str]]
    relation_counts: dict[str, int]
    issues: list[str]

    @property
    def shared(self) -> list[str]:
        return [r for r, kgs in self.usage.items() if len(kgs) > 1]

    @property
    def non_shared(self) -> list[str]:
        return [r for r, kgs in self.usage.items() if len(kgs) == 1]


def validate_unified_schema(kgs: Sequence[KnowledgeGraph]) -> SchemaReport:
    """Report which KGs use each relation ID. Never modifies the graphs."""
    if len(kgs) < 2:
        raise ValueError("schema validation needs at least two KGs")
    usage: dict[str, list[str]] = {}
    issues = []
    for kg in kgs:
        if not kg.relations:
            issues.append(f"{kg.kg_id}: empty relation set")
        for rel in kg.relations:
            usage.setdefault(rel, []).append(kg.kg_id)
    counts = {kg.kg_id: kg.n_relations for kg in kgs}
    return SchemaReport(usage, counts, issues)
