"""Multilingual knowledge graph completion by ensembling per-language embedding models."""

from .align import AlignmentMap, align_pair, csls, csls_matrix, predict_alignment, propose_mutual_nn
from .ensemble import KnowledgeEnsemble, boost, combine
from .exceptions import (ConfigError, EmptyGraphError, KensError, MetricError, NotFittedError,
                         SamplingError, SimilarityError, TrainingDivergedError, TripleParseError,
                         UnknownEntityError)
from .kg import (AnswerSet, KnowledgeGraph, Query, SeedAlignment, load_alignment, load_splits,
                 load_triples, split_dataset, validate_unified_schema)
from .metrics import EvalReport, evaluate_kg, filtered_rank, hits_at_k, mrr
from .models import RotatE, TransE, score_rotate, score_transe
from .space import EmbeddingSpace
from .train import JointEmbedding, TrainConfig, train_joint

__version__ = "0.1.0"

__all__ = [
    "AlignmentMap", "AnswerSet", "ConfigError", "EmbeddingSpace", "EmptyGraphError",
    "EvalReport", "JointEmbedding", "KensError", "KnowledgeEnsemble", "KnowledgeGraph",
    "MetricError", "NotFittedError", "Query", "RotatE", "SamplingError", "SeedAlignment",
    "SimilarityError", "TrainConfig", "TrainingDivergedError", "TransE", "TripleParseError",
    "UnknownEntityError", "align_pair", "boost", "combine", "csls", "csls_matrix",
    "evaluate_kg", "filtered_rank", "hits_at_k", "load_alignment", "load_splits",
    "load_triples", "mrr", "predict_alignment", "propose_mutual_nn", "score_rotate",
    "score_transe", "split_dataset", "train_joint", "validate_unified_schema",
]
