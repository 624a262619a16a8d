"""``kens`` command line: train, align, predict and evaluate from one JSON config.

Example config::

    {
      "kgs": {"el": {"triples": "el.tsv"}, "en": {"train": "en.train.tsv",
                                              "valid": "en.valid.tsv",
                                              "test": "en.test.tsv"}},
      "alignments": [{"kgs": ["el", "en"], "path": "el_en.tsv"}],
      "split": {"ratios": [0.6, 0.3, 0.1]},
      "train": {"model": "transe", "epochs": 50},
      "ensemble": {"target": "el", "mode": "boost", "k": 10},
      "queries": "queries.tsv",
      "output_dir": "run",
      "seed": 0
    }

Relative paths are resolved against the config file's directory. A KG given
as a single ``triples`` file is split with ``split.ratios``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from itertools import combinations

from threadpoolctl import threadpool_limits

from .align import align_pair
from .ensemble import BOOST, MODES, KnowledgeEnsemble
from .exceptions import ConfigError, KensError
from .kg import (SPLITS, TAIL, Query, SeedAlignment, _check_ratios,
                 _iter_records, load_alignment, load_splits, split_dataset)
from .metrics import EvalReport, evaluate_kg
from .space import EmbeddingSpace, atomic_write_text
from .train import TrainConfig, train_joint

logger = logging.getLogger("kens")

CHECKPOINT = "checkpoint.kens"
DEFAULT_RATIOS = (0.6, 0.3, 0.1)


@dataclass
class RunConfig:
    kgs: dict[str, dict[str, str]]
    alignments: list[dict] = field(default_factory=list)
    ratios: tuple[float, float, float] = DEFAULT_RATIOS
    split_seed: int | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    target: list[str] | None = None
    mode: str = BOOST
    k: int = 10
    csls_k: int = 10
    matching: str = "greedy"
    direction: str = TAIL
    queries: str | None = None
    output_dir: str = "kens-run"
    seed: int = 0

    @classmethod
    def from_dict(cls, data: dict, base_dir: str = ".") -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config", "top level must be a JSON object")
        known = {"kgs", "alignments", "split", "train", "ensemble", "queries", "output_dir", "seed"}
        for key in data:
            if key not in known:
                raise ConfigError(key, "unknown option")

        def path(value, name):
            if not isinstance(value, str) or not value:
                raise ConfigError(name, f"expected a file path, got {value!r}")
            return os.path.normpath(os.path.join(base_dir, value))

        seed = data.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise ConfigError("seed", f"must be an integer, got {seed!r}")

        kgs = {}
        raw_kgs = data.get("kgs")
        if not isinstance(raw_kgs, dict) or not raw_kgs:
            raise ConfigError("kgs", "need at least one KG")
        for kg_id, spec in raw_kgs.items():
            if isinstance(spec, str):
                spec = {"triples": spec}
            if not isinstance(spec, dict):
                raise ConfigError(f"kgs.{kg_id}", "expected a path or an object of paths")
            extra = set(spec) - {"triples", *SPLITS}
            if extra:
                raise ConfigError(f"kgs.{kg_id}.{sorted(extra)[0]}", "unknown option")
            if "triples" in spec and set(spec) & set(SPLITS):
                raise ConfigError(f"kgs.{kg_id}", "give either triples or split files, not both")
            if "triples" not in spec and "train" not in spec:
                raise ConfigError(f"kgs.{kg_id}", "missing triples or train file")
            kgs[kg_id] = {k: path(v, f"kgs.{kg_id}.{k}") for k, v in spec.items()}

        alignments = []
        for i, entry in enumerate(data.get("alignments", [])):
            name = f"alignments[{i}]"
            if not isinstance(entry, dict) or set(entry) != {"kgs", "path"}:
                raise ConfigError(name, "expected {\"kgs\": [a, b], \"path\": ...}")
            pair = entry["kgs"]
            if not isinstance(pair, list) or len(pair) != 2 or pair[0] == pair[1]:
                raise ConfigError(f"{name}.kgs", "expected two distinct KG ids")
            for kg_id in pair:
                if kg_id not in kgs:
                    raise ConfigError(f"{name}.kgs", f"unknown KG {kg_id!r}")
            alignments.append({"kgs": list(pair), "path": path(entry["path"], f"{name}.path")})

        split = data.get("split", {})
        if not isinstance(split, dict) or set(split) - {"ratios", "seed"}:
            raise ConfigError("split", "expected {\"ratios\": [...], \"seed\": ...}")
        ratios = split.get("ratios", list(DEFAULT_RATIOS))
        try:
            ratios = tuple(float(r) for r in ratios)
        except (TypeError, ValueError):
            raise ConfigError("split.ratios", f"expected three numbers, got {ratios!r}") from None
        try:
            _check_ratios(ratios)
        except ConfigError as exc:
            raise ConfigError("split.ratios", exc.message) from None

        train = data.get("train", {})
        if not isinstance(train, dict):
            raise ConfigError("train", "expected an object")
        train = dict(train)
        train.setdefault("seed", seed)
        try:
            train_cfg = TrainConfig.from_dict(train).resolved()
        except ConfigError as exc:
            field_name = exc.field if exc.field.startswith("train.") else f"train.{exc.field}"
            raise ConfigError(field_name, exc.message) from None
        except TypeError as exc:
            raise ConfigError("train", str(exc)) from None

        ens = data.get("ensemble", {})
        extra = set(ens) - {"target", "mode", "k", "csls_k", "matching", "direction"}
        if extra:
            raise ConfigError(f"ensemble.{sorted(extra)[0]}", "unknown option")
        target = ens.get("target")
        if isinstance(target, str):
            target = [target]
        for t in target or []:
            if t not in kgs:
                raise ConfigError("ensemble.target", f"unknown KG {t!r}")
        cfg = cls(
            kgs=kgs, alignments=alignments, ratios=ratios, split_seed=split.get("seed", seed),
            train=train_cfg, target=target, mode=ens.get("mode", BOOST), k=ens.get("k", 10),
            csls_k=ens.get("csls_k", 10), matching=ens.get("matching", "greedy"),
            direction=ens.get("direction", TAIL),
            queries=path(data["queries"], "queries") if data.get("queries") else None,
            output_dir=path(data.get("output_dir", "kens-run"), "output_dir"), seed=seed,
        )
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError("ensemble.mode", f"must be one of {MODES}, got {self.mode!r}")
        for name in ("k", "csls_k"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"ensemble.{name}", f"must be a positive integer, got {value!r}")
        if self.matching not in ("greedy", "hungarian"):
            raise ConfigError("ensemble.matching", f"must be greedy or hungarian, got {self.matching!r}")
        if self.direction not in ("tail", "head", "both"):
            raise ConfigError("ensemble.direction", f"must be tail, head or both, got {self.direction!r}")
        if not isinstance(self.split_seed, int) or isinstance(self.split_seed, bool):
            raise ConfigError("split.seed", f"must be an integer, got {self.split_seed!r}")

    def check_files(self) -> None:
        for kg_id, spec in self.kgs.items():
            for key, p in spec.items():
                if not os.path.isfile(p):
                    raise ConfigError(f"kgs.{kg_id}.{key}", f"no such file: {p}")
        for i, entry in enumerate(self.alignments):
            if not os.path.isfile(entry["path"]):
                raise ConfigError(f"alignments[{i}].path", f"no such file: {entry['path']}")

    def to_dict(self) -> dict:
        return {
            "kgs": self.kgs,
            "alignments": self.alignments,
            "split": {"ratios": list(self.ratios), "seed": self.split_seed},
            "train": asdict(self.train),
            "ensemble": {"target": self.target, "mode": self.mode, "k": self.k,
                         "csls_k": self.csls_k, "matching": self.matching,
                         "direction": self.direction},
            "queries": self.queries,
            "output_dir": self.output_dir,
            "seed": self.seed,
        }

    def out(self, *parts) -> str:
        return os.path.join(self.output_dir, *parts)


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"{path}: invalid JSON ({exc})") from None
    cfg = RunConfig.from_dict(data, base_dir=os.path.dirname(os.path.abspath(path)))
    cfg.check_files()
    return cfg


def load_kgs(cfg: RunConfig):
    kgs = []
    for i, (kg_id, spec) in enumerate(cfg.kgs.items()):
        if "triples" in spec:
            kg = split_dataset(load_splits({"train": spec["triples"]}, kg_id), cfg.ratios,
                               seed=cfg.split_seed + i)
        else:
            kg = load_splits(spec, kg_id)
        kgs.append(kg)
    return kgs


def _store_path(cfg, a, b):
    return cfg.out("alignments", f"{a}__{b}.tsv")


def load_stores(cfg: RunConfig, kgs, grown=True):
    """Seed alignments from the config, replaced by the stores saved by ``train`` if present."""
    by_id = {kg.kg_id: kg for kg in kgs}
    stores = []
    for entry in cfg.alignments:
        a, b = entry["kgs"]
        seed = load_alignment(entry["path"], by_id[a], by_id[b])
        saved = _store_path(cfg, a, b)
        if grown and os.path.isfile(saved):
            full = load_alignment(saved, by_id[a], by_id[b])
            store = SeedAlignment(a, b, seed.pairs())
            for x, y in full.pairs().tolist():
                if (x, y) not in store:
                    store.add(x, y, SeedAlignment.SELF_LEARNED)
            store.coverage = full.coverage
            seed = store
        stores.append(seed)
    return stores


def _write_store(store, ka, kb, path):
    text = "".join(f"{ka.entities[a]}\t{kb.entities[b]}\n" for a, b in store.pairs().tolist())
    atomic_write_text(path, text)


def _trace_csv(trace) -> str:
    columns = []
    for row in trace:
        for key in row:
            if key not in columns:
                columns.append(key)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in trace:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


def cmd_train(cfg: RunConfig, args) -> int:
    kgs = load_kgs(cfg)
    stores = load_stores(cfg, kgs, grown=False)
    os.makedirs(cfg.out("alignments"), exist_ok=True)
    space, grown, trace = train_joint(kgs, stores, cfg.train)
    space.save(cfg.out(CHECKPOINT))
    atomic_write_text(cfg.out("loss_trace.csv"), _trace_csv(trace))
    atomic_write_text(cfg.out("config.resolved.json"),
                      json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    by_id = {kg.kg_id: kg for kg in kgs}
    for (a, b), store in grown.items():
        _write_store(store, by_id[a], by_id[b], _store_path(cfg, a, b))
        n_self = len(store.pairs(SeedAlignment.SELF_LEARNED))
        print(f"{a}<->{b}: {len(store)} aligned pairs ({n_self} self-learned)")
    print(f"checkpoint written to {cfg.out(CHECKPOINT)}")
    return 0


def load_checkpoint(cfg: RunConfig, args, kgs) -> EmbeddingSpace:
    path = args.checkpoint or cfg.out(CHECKPOINT)
    if not os.path.isfile(path):
        raise ConfigError("checkpoint", f"no checkpoint at {path}; run `kens train` first")
    space = EmbeddingSpace.load(path)
    if space.model != cfg.train.model:
        raise ConfigError("train.model",
                          f"config says {cfg.train.model!r} but the checkpoint holds {space.model!r}")
    if space.dim != cfg.train.dim:
        raise ConfigError("train.dim", f"config says {cfg.train.dim} but the checkpoint has {space.dim}")
    for kg in kgs:
        if kg.kg_id not in space.entity_ids:
            raise ConfigError("kgs", f"KG {kg.kg_id!r} is missing from the checkpoint")
        if (space.entity_ids[kg.kg_id] != kg.entities
                or space.relation_ids[kg.kg_id] != kg.relations):
            raise ConfigError(f"kgs.{kg.kg_id}", "vocabulary differs from the checkpoint")
    return space


def cmd_align(cfg: RunConfig, args) -> int:
    kgs = load_kgs(cfg)
    space = load_checkpoint(cfg, args, kgs)
    by_id = {kg.kg_id: kg for kg in kgs}
    stores = {(st.kg_a, st.kg_b): st for st in load_stores(cfg, kgs)}
    os.makedirs(cfg.out("align"), exist_ok=True)
    for a, b in combinations(by_id, 2):
        store = stores.get((a, b)) or stores.get((b, a))
        amap = align_pair(space, a, b, store, k=cfg.csls_k, method=cfg.matching)
        small, large = by_id[amap.kg_small], by_id[amap.kg_large]
        amap.write_tsv(cfg.out("align", f"{small.kg_id}__{large.kg_id}.tsv"),
                       small.entities, large.entities)
        n_fixed = sum(1 for p in amap.provenance.values() if p in (SeedAlignment.SEED, SeedAlignment.SELF_LEARNED))
        print(f"{small.kg_id}->{large.kg_id}: {len(amap.forward)}/{small.n_entities} matched "
              f"({len(amap.forward) / small.n_entities:.1%} coverage, {n_fixed} from the store)")
    return 0


def _ensembles(cfg: RunConfig, args, mode):
    kgs = load_kgs(cfg)
    space = load_checkpoint(cfg, args, kgs)
    stores = load_stores(cfg, kgs)
    targets = cfg.target or [min(kgs, key=lambda kg: kg.n_entities).kg_id]
    for target in targets:
        ens = KnowledgeEnsemble(target=target, mode=mode, k=cfg.k, csls_k=cfg.csls_k,
                                matching=cfg.matching, direction=cfg.direction)
        yield ens.fit((kgs, space, stores))


def _read_queries(path, kg, stats):
    queries = []
    for lineno, (head, rel) in _iter_records(path, 2):
        h, r = kg.entity_index.get(head), kg.relation_index.get(rel)
        if h is None or r is None:
            what = f"unknown head {head!r}" if h is None else f"unknown relation {rel!r}"
            logger.warning("%s:%d: %s in %s; skipped", path, lineno, what, kg.kg_id)
            stats["skipped"] += 1
            continue
        queries.append(Query(h, r))
    return queries


def cmd_predict(cfg: RunConfig, args) -> int:
    path = args.queries or cfg.queries
    if not path:
        raise ConfigError("queries", "no query file given")
    if not os.path.isfile(path):
        raise ConfigError("queries", f"no such file: {path}")
    for ens in _ensembles(cfg, args, cfg.mode):
        kg = ens.kgs_[ens.target_]
        stats = {"skipped": 0}
        rows = []
        queries = _read_queries(path, kg, stats)
        for q in queries:
            ranking = ens.rank(q, exclude=ens._exclude(q))
            for pos, (e, score) in enumerate(ranking, start=1):
                rows.append(f"{kg.entities[q.entity]}\t{kg.relations[q.relation]}\t{pos}\t"
                            f"{kg.entities[e]}\t{score:.6f}\n")
        out = cfg.out(f"predictions.{kg.kg_id}.{cfg.mode}.tsv")
        atomic_write_text(out, "".join(rows))
        if cfg.mode == BOOST:
            dump = []
            for (direction, e), ew in sorted(ens.entity_weights_.items()):
                for model, w in ew.weights.items():
                    dump.append(f"{kg.entities[e]}\t{model}\t{w:.6f}\n")
            atomic_write_text(cfg.out(f"weights.{kg.kg_id}.tsv"), "".join(dump))
        print(f"{kg.kg_id}: {len(queries)} queries answered, {stats['skipped']} skipped -> {out}")
    return 0


def cmd_evaluate(cfg: RunConfig, args) -> int:
    for ens in _ensembles(cfg, args, cfg.mode):
        report: EvalReport = evaluate_kg(ens, mode=cfg.mode)
        stem = cfg.out(f"eval.{report.kg}.{report.mode}")
        data = {"kg": report.kg, "mode": report.mode, "hits": report.hits,
                "n_queries": report.n_queries, "u": report.u}
        atomic_write_text(stem + ".json", json.dumps(data, indent=2, sort_keys=True) + "\n")
        atomic_write_text(stem + ".tsv", EvalReport.TSV_HEADER + "\n" + report.to_tsv_row() + "\n")
        print(report.to_tsv_row())
    return 0


COMMANDS = {"train": cmd_train, "align": cmd_align, "predict": cmd_predict, "evaluate": cmd_evaluate}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kens", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run config")
        p.add_argument("--threads", type=int, default=None, help="cap on numeric worker threads")
        p.add_argument("--deterministic", action="store_true", help="force serial numeric paths")
        p.add_argument("--mode", choices=MODES, default=None)
        p.add_argument("--k", type=int, default=None)
        p.add_argument("--checkpoint", default=None, help="defaults to <output_dir>/" + CHECKPOINT)
        if name == "predict":
            p.add_argument("--queries", default=None, help="head<TAB>relation lines")
    return parser


def _setup_logging():
    level = os.environ.get("KENS_LOG", "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        level = "WARNING"
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.mode is not None:
            cfg.mode = args.mode
        if args.k is not None:
            cfg.k = args.k
        cfg.validate()
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads", f"must be >= 1, got {args.threads}")
        os.makedirs(cfg.output_dir, exist_ok=True)
        limit = 1 if args.deterministic else args.threads
        with threadpool_limits(limits=limit):
            return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"kens: config error: {exc}", file=sys.stderr)
        return 2
    except (KensError, OSError, ValueError, KeyError) as exc:
        logger.debug("failure", exc_info=True)
        print(f"kens: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
