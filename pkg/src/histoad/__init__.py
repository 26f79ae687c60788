"""histoad - Anomaly detection for histopathology slides.

histoad finds slides that differ from a collection of normal tissue. Slides
are tiled into patches, stain-normalized and embedded; patches are scored by
k-nearest-neighbour distance to normal reference features or by a small head
trained on normal features (optionally with outlier exposure). The top
patch scores of a slide give its slide score, and the cross-validated AUROC
of slide scores is the headline metric.

Features:
    - Tissue detection and patch grids with a background filter
    - Reinhard stain normalization in lαβ space
    - Augmented patch views and test-time augmentation
    - kNN scoring and five trainable objectives (BCE, HSC, DeepSAD,
      compactness, autoencoder)
    - Outlier-exposure batches mixing near and far auxiliary data
    - Top-fraction slide aggregation and heatmaps
    - AUROC, sensitivity thresholds and k-fold cross-validation
    - Deterministic synthetic features and toy rasters for testing

Quick Start:
    Install the package:
        pip install -e .

    Generate synthetic data and cross-validate a kNN detector:
        $ histoad synth --out-dir data --seed 1
        $ histoad crossval --manifest data/manifest.csv --seed 1 --method knn

    The same from Python:
        >>> from histoad import api, load_config, read_manifest
        >>> cfg = load_config()
        >>> report = api.crossval_from_manifest(read_manifest("data/manifest.csv"), cfg)
        >>> print(report.format_table())

Package Layout:
    preprocessing
        Rasters, tissue masks, tiling, stain normalization, views, embedders.
    features
        Binary feature files, manifests, outlier-exposure filtering and sampling.
    models
        MLP heads, objectives with analytic gradients, SGD, training, checkpoints.
    scoring
        Patch scorers, slide aggregation, heatmaps.
    evaluation
        AUROC, sensitivity thresholds, annotations, cross-validation, reports.
    synth
        Synthetic feature pools and rasters with known ground truth.

Configuration:
    Every stage reads its section of a :class:`PipelineConfig`. ``load_config()``
    uses an explicit path, then ``$HISTOAD_CONFIG``, then the bundled
    ``default_config.json``.

See Also:
    - README.md for the command-line workflow
    - DESIGN.md for decisions behind defaults and file formats
"""

from . import api
from .config import PipelineConfig, load_config
from .errors import (
    ConfigurationError,
    FeatureFileError,
    HistoadError,
    InvalidInputError,
    NumericalError,
    UndefinedSimilarityError,
)
from .evaluation import EvalReport, auroc, make_folds, run_crossval, sensitivity_threshold
from .features import FeatureMatrix, Label, PatchMeta, TissueClass, read_features, read_manifest, write_features
from .models import TrainConfig, TrainResult, load_checkpoint, save_checkpoint, train
from .scoring import ScoreTable, aggregate_slide, knn_scores, tta_score
from .synth import SynthSpec, gen_features, gen_raster

__version__ = "0.1.0"

__all__ = [
    "api",
    "PipelineConfig",
    "load_config",
    "HistoadError",
    "InvalidInputError",
    "ConfigurationError",
    "FeatureFileError",
    "NumericalError",
    "UndefinedSimilarityError",
    "FeatureMatrix",
    "PatchMeta",
    "Label",
    "TissueClass",
    "read_features",
    "write_features",
    "read_manifest",
    "TrainConfig",
    "TrainResult",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "ScoreTable",
    "knn_scores",
    "tta_score",
    "aggregate_slide",
    "EvalReport",
    "auroc",
    "sensitivity_threshold",
    "make_folds",
    "run_crossval",
    "SynthSpec",
    "gen_features",
    "gen_raster",
]
