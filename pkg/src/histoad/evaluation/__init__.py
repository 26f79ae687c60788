"""AUROC, sensitivity thresholds, annotations and cross-validation."""

from .annotations import (
    AnnotationKind,
    PatchLabels,
    PatchTruth,
    Region,
    is_simple,
    patch_labels_from_annotations,
    point_in_polygon,
    points_in_polygon,
    read_annotations,
    write_annotations,
)
from .crossval import (
    METHODS,
    CrossvalData,
    CrossvalSettings,
    EvalConfig,
    FoldPlan,
    evaluate_split,
    fit_and_score,
    make_folds,
    patch_auroc_of,
    run_crossval,
)
from .metrics import (
    LabeledScores,
    SensitivityResult,
    artifact_auroc,
    auroc,
    auroc_arrays,
    group_report,
    pairwise_auroc,
    sensitivity_threshold,
)
from .report import EvalReport, FoldResult, mean_std

__all__ = [
    "LabeledScores",
    "SensitivityResult",
    "auroc",
    "auroc_arrays",
    "pairwise_auroc",
    "sensitivity_threshold",
    "group_report",
    "artifact_auroc",
    "AnnotationKind",
    "PatchTruth",
    "PatchLabels",
    "Region",
    "points_in_polygon",
    "point_in_polygon",
    "is_simple",
    "read_annotations",
    "write_annotations",
    "patch_labels_from_annotations",
    "METHODS",
    "EvalConfig",
    "FoldPlan",
    "CrossvalData",
    "CrossvalSettings",
    "make_folds",
    "fit_and_score",
    "patch_auroc_of",
    "evaluate_split",
    "run_crossval",
    "EvalReport",
    "FoldResult",
    "mean_std",
]
