"""Python bindings for the PFMN 360-degree video summarization library."""

from ._core import (
    Error,
    f1_score,
    frame_cosine_similarity,
    frame_overlap,
    kts_segment,
    kts_segment_auto,
    read_features,
    selection_prior,
    summarize,
    summary_length,
    synth_gen,
    viewpoint_grid,
    write_features,
)

FEATURE_POOL_VECTORS = 0
FEATURE_SPATIAL_MAPS = 1
FEATURE_SCORES = 2

__all__ = [
    "Error",
    "FEATURE_POOL_VECTORS",
    "FEATURE_SPATIAL_MAPS",
    "FEATURE_SCORES",
    "f1_score",
    "frame_cosine_similarity",
    "frame_overlap",
    "kts_segment",
    "kts_segment_auto",
    "read_features",
    "selection_prior",
    "summarize",
    "summary_length",
    "synth_gen",
    "viewpoint_grid",
    "write_features",
]
