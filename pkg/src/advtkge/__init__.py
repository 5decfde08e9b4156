"""Adversarial negative sampling for temporal knowledge graph embeddings."""
from .checkpoint import Checkpoint, CheckpointError
from .config import RunConfig
from .dataset import (
    ConfigurationError,
    DataError,
    FilterIndex,
    ParseError,
    PreparedDataset,
    Vocabulary,
    build_filter_index,
    build_vocabulary,
    bucket_timestamps,
    encode,
    load_prepared,
    parse_quadruple_file,
    prepare,
    save_prepared,
)
from .estimator import EmbeddingPCA, TemporalKGEmbedding, check_quadruples
from .evaluation import RankMetrics, evaluate_split, rank_entity
from .generator import Generator, uniform_corrupt
from .models import MODEL_TAGS, ModelKind, TKGEModel, build_model, lipschitz_enforce
from .numerics import NumericError, rng_stream
from .trainer import TrainConfig, TrainingAborted, TrainingData, TrainState, adversarial_train, baseline_train, train

__all__ = [
    "Checkpoint",
    "CheckpointError",
    "ConfigurationError",
    "DataError",
    "EmbeddingPCA",
    "FilterIndex",
    "Generator",
    "MODEL_TAGS",
    "ModelKind",
    "NumericError",
    "ParseError",
    "PreparedDataset",
    "RankMetrics",
    "RunConfig",
    "TKGEModel",
    "TemporalKGEmbedding",
    "TrainConfig",
    "TrainState",
    "TrainingAborted",
    "TrainingData",
    "Vocabulary",
    "adversarial_train",
    "baseline_train",
    "build_filter_index",
    "build_model",
    "build_vocabulary",
    "bucket_timestamps",
    "check_quadruples",
    "encode",
    "evaluate_split",
    "lipschitz_enforce",
    "load_prepared",
    "parse_quadruple_file",
    "prepare",
    "rank_entity",
    "rng_stream",
    "save_prepared",
    "train",
    "uniform_corrupt",
]
