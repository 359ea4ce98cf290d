"""Cross-modal contrastive pretraining for overhead imagery.

An RGB encoder and an above-ground-level height encoder are trained to agree
on co-registered scenes; the frozen RGB backbone then feeds dense downstream
heads (siamese change detection, semantic segmentation).
"""

from .contrastive import (
    LossBreakdown,
    Temperature,
    cosine_similarity_matrix,
    nt_xent,
    retrieval_accuracy,
)
from .encoders import (
    BackbonePlan,
    EmbeddingBatch,
    EncoderBundle,
    EncoderConfig,
    FeaturePyramid,
    build_encoder,
)
from .heads import (
    HeadSpec,
    SegmentationOutput,
    build_change_model,
    build_segmentation_model,
    predict,
)
from .metrics import ConfusionMatrix, MetricsReport, accumulate, compute_report
from .training import RunRecord, TrainConfig, finetune, pretrain

__version__ = "0.1.0"

__all__ = [
    "Temperature",
    "LossBreakdown",
    "cosine_similarity_matrix",
    "nt_xent",
    "retrieval_accuracy",
    "BackbonePlan",
    "EncoderConfig",
    "EncoderBundle",
    "EmbeddingBatch",
    "FeaturePyramid",
    "build_encoder",
    "HeadSpec",
    "SegmentationOutput",
    "build_change_model",
    "build_segmentation_model",
    "predict",
    "ConfusionMatrix",
    "MetricsReport",
    "accumulate",
    "compute_report",
    "TrainConfig",
    "RunRecord",
    "pretrain",
    "finetune",
    "__version__",
]
