"""Embedding-space distillation toolkit.

Trains a batch-normalized linear projection (optionally behind a small
MLP) so one model's embeddings match another's, and evaluates embedding
sets without any further training: PCA + kNN accuracy over repeated
splits, linear CKA similarity, a multi-center robustness index, and a
seeded patch tiling/augmentation pipeline.
"""

__version__ = "0.1.0"

from .distill import (
    AdamW,
    CosineSchedule,
    DistillConfig,
    DistillResult,
    IdentityStudent,
    LossWindowMonitor,
    MlpStudent,
    ProjectionHead,
    log_power_sum_loss,
    log_power_sum_loss_grad,
    make_student,
    run_distillation,
)
from .errors import DataValidationError, NumericalError
from .estimators import EmbeddingDistiller, KnnVoteClassifier, PcaReducer
from .evalbench import (
    BenchConfig,
    BenchmarkResult,
    PcaModel,
    knn_predict,
    knn_predict_batch,
    mean_pool,
    pca_fit,
    pca_transform,
    pool_bags,
    run_benchmark,
)
from .rng import make_rng
from .robustness import (
    RobustnessConfig,
    RobustnessResult,
    robustness_cv,
    robustness_index,
    sample_balanced,
)
from .similarity import CkaReport, center_columns, cka_report, cka_report_sets, linear_cka
from .store import (
    AlignedPairs,
    EmbeddingSet,
    SampleMeta,
    align_pairs,
    group_by_bag,
    ingest_csv,
    read_embedding_set,
    write_embedding_set,
)

__all__ = [
    "AdamW",
    "AlignedPairs",
    "BenchConfig",
    "BenchmarkResult",
    "CkaReport",
    "CosineSchedule",
    "DataValidationError",
    "DistillConfig",
    "DistillResult",
    "EmbeddingDistiller",
    "EmbeddingSet",
    "IdentityStudent",
    "KnnVoteClassifier",
    "LossWindowMonitor",
    "MlpStudent",
    "NumericalError",
    "PcaModel",
    "PcaReducer",
    "ProjectionHead",
    "RobustnessConfig",
    "RobustnessResult",
    "SampleMeta",
    "align_pairs",
    "center_columns",
    "cka_report",
    "cka_report_sets",
    "group_by_bag",
    "ingest_csv",
    "knn_predict",
    "knn_predict_batch",
    "linear_cka",
    "log_power_sum_loss",
    "log_power_sum_loss_grad",
    "make_rng",
    "make_student",
    "mean_pool",
    "pca_fit",
    "pca_transform",
    "pool_bags",
    "read_embedding_set",
    "robustness_cv",
    "robustness_index",
    "run_benchmark",
    "run_distillation",
    "sample_balanced",
    "write_embedding_set",
]
