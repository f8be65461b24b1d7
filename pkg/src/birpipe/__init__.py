"""Background-interference-removal pipeline for vehicle re-identification.

Mask post-processing, dataset manifests with random-k variant mixing, a
toy batch-hard triplet-loss trainer, and retrieval (mAP/CMC) evaluation,
tied together by the `birpipe` command-line tool.
"""

from .evaluation import EvalResult, RankedList, average_precision, evaluate, rank_gallery
from .manifest import (
    CropRecord,
    ImageRecord,
    Manifest,
    assemble_protocol,
    filter_crops,
    mix_random_selection,
    pair_segmented,
)
from .masks import (
    ComponentLabeling,
    PostprocessOutcome,
    apply_mask,
    area_ratio,
    fill_holes,
    keep_largest_component,
    label_components,
    postprocess,
    refine_with_edges,
)
from .training import TrainConfig, TrainResult, sample_pk_batch, train_toy
from .triplet import Batch, EmbeddingModel, batch_hard_loss, embed, loss_gradient, pairwise_distances

__version__ = "0.1.0"

__all__ = [
    "Batch",
    "ComponentLabeling",
    "CropRecord",
    "EmbeddingModel",
    "EvalResult",
    "ImageRecord",
    "Manifest",
    "PostprocessOutcome",
    "RankedList",
    "TrainConfig",
    "TrainResult",
    "apply_mask",
    "area_ratio",
    "assemble_protocol",
    "average_precision",
    "batch_hard_loss",
    "embed",
    "evaluate",
    "fill_holes",
    "filter_crops",
    "keep_largest_component",
    "label_components",
    "loss_gradient",
    "mix_random_selection",
    "pair_segmented",
    "pairwise_distances",
    "postprocess",
    "rank_gallery",
    "refine_with_edges",
    "sample_pk_batch",
    "train_toy",
    "__version__",
]
