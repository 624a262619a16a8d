"""Shared embedding space holding every KG's entity and relation tables."""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .kg import TAIL, Query
from .models import get_model

HEADER = "KENS-EMB v1"

# IDs are space-separated in the checkpoint, so whitespace and '%' are escaped
_ESCAPES = {"%": "%25", " ": "%20", "\t": "%09", "\n": "%0A", "\r": "%0D"}


def _escape(token: str) -> str:
    if any(c in token for c in _ESCAPES):
        return "".join(_ESCAPES.get(c, c) for c in token)
    return token


def _unescape(token: str) -> str:
    if "%" not in token:
        return token
    for raw, esc in reversed(list(_ESCAPES.items())):
        token = token.replace(esc, raw)
    return token


@dataclass(eq=False)
class EmbeddingSpace:
    model: str
    dim: int
    kg_ids: list[str] = field(default_factory=list)
    entity_ids: dict[str, list[str]] = field(default_factory=dict)
    relation_ids: dict[str, list[str]] = field(default_factory=dict)
    entities: dict[str, np.ndarray] = field(default_factory=dict)
    relations: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def scorer(self):
        return get_model(self.model)

    def add_kg(self, kg_id, entity_ids, relation_ids, ent, rel):
        width = self.scorer.entity_width(self.dim)
        if ent.shape != (len(entity_ids), width) or rel.shape != (len(relation_ids), self.dim):
            raise ValueError(f"{kg_id}: table shapes {ent.shape}, {rel.shape} do not match d={self.dim}")
        self.kg_ids.append(kg_id)
        self.entity_ids[kg_id] = list(entity_ids)
        self.relation_ids[kg_id] = list(relation_ids)
        self.entities[kg_id] = ent
        self.relations[kg_id] = rel

    def score_candidates(self, kg_id: str, query: Query) -> np.ndarray:
        """Score every entity of ``kg_id`` as the missing end of ``query``."""
        ent = self.entities[kg_id]
        return self.scorer.score_candidates(
            ent, self.relations[kg_id][query.relation], ent[query.entity], query.direction
        )

    def rank_candidates(self, kg_id: str, query: Query) -> tuple[np.ndarray, np.ndarray]:
        """All entities by descending score, ties by ascending index."""
        scores = self.score_candidates(kg_id, query)
        order = np.lexsort((np.arange(len(scores)), -scores))
        return order, scores[order]

    def score_triples(self, kg_id: str, triples) -> np.ndarray:
        triples = np.asarray(triples).reshape(-1, 3)
        ent, rel = self.entities[kg_id], self.relations[kg_id]
        return self.scorer.forward(ent[triples[:, 0]], rel[triples[:, 1]], ent[triples[:, 2]])[0]

    def all_finite(self) -> bool:
        tables = list(self.entities.values()) + list(self.relations.values())
        return all(np.isfinite(t).all() for t in tables)

    def save(self, path) -> None:
        """Write the text checkpoint atomically."""
        lines = [f"{HEADER} {self.model} {self.dim}"]
        for kg in self.kg_ids:
            ents, rels = self.entity_ids[kg], self.relation_ids[kg]
            lines.append(f"KG {_escape(kg)} {len(ents)} {len(rels)}")
            for ids, table in ((ents, self.entities[kg]), (rels, self.relations[kg])):
                for name, row in zip(ids, table.tolist()):
                    lines.append(_escape(name) + " " + " ".join(map(repr, row)))
        atomic_write_text(path, "\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "EmbeddingSpace":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().split()
            if len(header) != 4 or " ".join(header[:2]) != HEADER:
                raise ValueError(f"{path}: not a {HEADER} checkpoint")
            space = cls(model=header[2], dim=int(header[3]))
            width = space.scorer.entity_width(space.dim)
            while True:
                line = fh.readline()
                if not line:
                    break
                if not line.strip():
                    continue
                tag, kg, n_ent, n_rel = line.split()
                if tag != "KG":
                    raise ValueError(f"{path}: expected KG block, got {line[:40]!r}")
                tables = []
                for n, w in ((int(n_ent), width), (int(n_rel), space.dim)):
                    ids, rows = [], np.empty((n, w))
                    for i in range(n):
                        parts = fh.readline().split()
                        if len(parts) != w + 1:
                            raise ValueError(f"{path}: row for {parts[:1]} has {len(parts) - 1} values, expected {w}")
                        ids.append(_unescape(parts[0]))
                        rows[i] = [float(x) for x in parts[1:]]
                    tables.append((ids, rows))
                (eids, ent), (rids, rel) = tables
                space.add_kg(_unescape(kg), eids, rids, ent, rel)
        return space


def atomic_write_text(path, text: str) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


__all__ = ["EmbeddingSpace", "atomic_write_text", "TAIL"]
