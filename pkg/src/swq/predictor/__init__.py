"""Micro-transformer latency predictor: features, model, loss, training, checkpoints."""

from swq.predictor.features import (
    FEATURE_NAMES,
    N_FEATURES,
    ContextWindow,
    FeatureRow,
    NormStats,
    PacketStream,
    WindowConfig,
    build_dataset,
    compute_norm_stats,
    featurize,
    window_matrix,
)
from swq.predictor.loss import LossConfig, change_point_loss, change_point_weights
from swq.predictor.model import (
    ModelParams,
    PredictionBatch,
    PredictorConfig,
    describe,
    encode_windows,
    export_embeddings,
    forward,
    init_params,
    predict,
)
from swq.predictor.training import Dataset, evaluate_loss, fine_tune, train
from swq.predictor.checkpoint import (
    CHECKPOINT_MAGIC,
    CHECKPOINT_SCHEMA_VERSION,
    CheckpointError,
    load_checkpoint,
    save_checkpoint,
)

__all__ = [
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_SCHEMA_VERSION",
    "CheckpointError",
    "ContextWindow",
    "Dataset",
    "FEATURE_NAMES",
    "FeatureRow",
    "LossConfig",
    "ModelParams",
    "N_FEATURES",
    "NormStats",
    "PacketStream",
    "PredictionBatch",
    "PredictorConfig",
    "WindowConfig",
    "build_dataset",
    "change_point_loss",
    "change_point_weights",
    "compute_norm_stats",
    "describe",
    "encode_windows",
    "evaluate_loss",
    "export_embeddings",
    "featurize",
    "fine_tune",
    "forward",
    "init_params",
    "load_checkpoint",
    "predict",
    "save_checkpoint",
    "train",
    "window_matrix",
]
