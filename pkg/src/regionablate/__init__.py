"""Region ablation for apparent-personality regression.

Leakage-free grouped splits, face / background / entire-frame image
conditions, a small momentum-SGD regressor, and the correlation statistics
used to compare conditions.
"""

from __future__ import annotations

from .corpus import ClipRef, SplitManifest, SplitQuota, build_splits, ingest, overlap_stats, verify_disjoint
from .errors import RegionAblateError
from .imageops import (
    BoundingBox,
    SigmaAccumulator,
    SimilarityTransform,
    estimate_similarity_transform,
    make_background_condition,
    make_entire_frame_condition,
    make_face_condition,
)
from .stats import CorrelationResult, TraitVector, compare_correlations, fisher_z, pearson, significance
from .trainkit import FusionModel, Regressor, TrainConfig, predict, train, train_fusion

__version__ = "0.1.0"

__all__ = [
    "BoundingBox",
    "ClipRef",
    "CorrelationResult",
    "FusionModel",
    "RegionAblateError",
    "Regressor",
    "SigmaAccumulator",
    "SimilarityTransform",
    "SplitManifest",
    "SplitQuota",
    "TrainConfig",
    "TraitVector",
    "build_splits",
    "compare_correlations",
    "estimate_similarity_transform",
    "fisher_z",
    "ingest",
    "make_background_condition",
    "make_entire_frame_condition",
    "make_face_condition",
    "overlap_stats",
    "pearson",
    "predict",
    "significance",
    "train",
    "train_fusion",
    "verify_disjoint",
]
