"""Patch scoring, slide aggregation and heatmaps."""

from .aggregate import (
    AggregationConfig,
    ScoreTable,
    aggregate_slide,
    aggregate_table,
    read_slide_scores,
    write_slide_scores,
)
from .heatmap import (
    COLORMAPS,
    Colormap,
    HeatmapCanvas,
    HeatmapConfig,
    HeatmapRenderer,
    canvas_from_scores,
    get_colormap,
    heatmap_accumulate,
    heatmap_render,
    write_grid,
)
from .scorers import (
    SCORE_MODES,
    KnnConfig,
    TtaConfig,
    classifier_score,
    default_mode,
    knn_score,
    knn_scores,
    score_matrix,
    tta_score,
    tta_scores,
)

__all__ = [
    "KnnConfig",
    "TtaConfig",
    "SCORE_MODES",
    "knn_score",
    "knn_scores",
    "classifier_score",
    "tta_score",
    "tta_scores",
    "score_matrix",
    "default_mode",
    "AggregationConfig",
    "ScoreTable",
    "aggregate_slide",
    "aggregate_table",
    "write_slide_scores",
    "read_slide_scores",
    "Colormap",
    "COLORMAPS",
    "get_colormap",
    "HeatmapConfig",
    "HeatmapCanvas",
    "HeatmapRenderer",
    "heatmap_accumulate",
    "heatmap_render",
    "canvas_from_scores",
    "write_grid",
]
