"""Patch anomaly scores from features.

Two families: nearest-neighbour distances against a reference set of normal
features, and trained heads (see :mod:`histoad.models`). All scores are
"higher means more anomalous".
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import expit

from ..errors import ConfigurationError, InvalidInputError
from ..features.io import FeatureMatrix
from ..models.losses import center_distance, hsc_radius, reconstruction_error
from ..models.mlp import MlpParams, forward
from ..models.trainer import TrainResult

logger = logging.getLogger(__name__)

KNN_VARIANTS = ("mean", "kth")
# Classifier scores stay strictly inside (0, 1) even where the sigmoid saturates.
SCORE_FLOOR = np.nextafter(0.0, 1.0)
SCORE_CEIL = np.nextafter(1.0, 0.0)
SCORE_MODES = ("knn", "classifier", "radius", "center_distance", "reconstruction", "embedding_knn")

DEFAULT_MODE = {
    "bce": "classifier",
    "hsc": "radius",
    "deepsad": "center_distance",
    "compactness": "center_distance",
    "autoencoder": "reconstruction",
}

Rows = Union[FeatureMatrix, np.ndarray]


@dataclass(frozen=True)
class KnnConfig:
    """Nearest-neighbour scoring.

    ``variant="mean"`` averages the k smallest distances; ``"kth"`` uses the
    k-th smallest one.
    """
    k: int = 5
    metric: str = "euclidean"
    variant: str = "mean"
    chunk_rows: int = 2048

    def __post_init__(self):
        if self.k < 1:
            raise ConfigurationError(f"k must be positive, got {self.k}")
        if self.metric != "euclidean":
            raise ConfigurationError(f"Unsupported metric '{self.metric}'")
        if self.variant not in KNN_VARIANTS:
            raise ConfigurationError(f"variant must be one of {KNN_VARIANTS}, got '{self.variant}'")


@dataclass(frozen=True)
class TtaConfig:
    n_views: int = 10

    def __post_init__(self):
        if self.n_views < 1:
            raise ConfigurationError(f"n_views must be >= 1, got {self.n_views}")


def _rows(data: Rows) -> np.ndarray:
    arr = data.rows if isinstance(data, FeatureMatrix) else np.asarray(data)
    arr = np.asarray(arr, dtype=np.float64)
    return arr[None, :] if arr.ndim == 1 else arr


def knn_scores(queries: Rows, reference: Rows, cfg: KnnConfig = KnnConfig()) -> np.ndarray:
    """kNN anomaly score of every query row.

    Raises:
        ConfigurationError: If ``k`` exceeds the reference size.
        InvalidInputError: If dimensions differ.
    """
    q, ref = _rows(queries), _rows(reference)
    if cfg.k > ref.shape[0]:
        raise ConfigurationError(f"k={cfg.k} exceeds reference size {ref.shape[0]}")
    if q.shape[1] != ref.shape[1]:
        raise InvalidInputError(f"Dimension mismatch: query D={q.shape[1]}, reference D={ref.shape[1]}")
    out = np.empty(q.shape[0])
    k = cfg.k
    for start in range(0, q.shape[0], cfg.chunk_rows):
        dist = cdist(q[start:start + cfg.chunk_rows], ref, metric="euclidean")
        nearest = np.sort(np.partition(dist, k - 1, axis=1)[:, :k], axis=1)
        out[start:start + cfg.chunk_rows] = nearest.mean(axis=1) if cfg.variant == "mean" else nearest[:, -1]
    return out


def knn_score(query, reference: Rows, cfg: KnnConfig = KnnConfig()) -> float:
    """kNN anomaly score of a single query vector."""
    query = np.asarray(query, dtype=np.float64)
    if query.ndim != 1:
        raise InvalidInputError("knn_score takes one vector; use knn_scores for batches")
    return float(knn_scores(query[None, :], reference, cfg)[0])


def _check_classifier(params: MlpParams):
    if params.output_dim != 1:
        raise InvalidInputError(f"Classifier scoring needs a width-1 head, got width {params.output_dim}")


def classifier_score(params: MlpParams, x) -> Union[float, np.ndarray]:
    """Anomaly-class probability ``sigmoid(forward(params, x))``.

    Logits beyond about +-37 saturate in float64; those scores are clipped
    to the nearest representable values inside (0, 1) and tie with each
    other. Returns a float for a single vector and an array for a batch.
    """
    _check_classifier(params)
    x = np.asarray(x, dtype=np.float64)
    out = np.clip(expit(forward(params, x)), SCORE_FLOOR, SCORE_CEIL)
    return float(out[0]) if x.ndim == 1 else out[:, 0]


def tta_score(view_scores: Sequence[float]) -> float:
    """Arithmetic mean of per-view scores of one patch."""
    arr = np.asarray(view_scores, dtype=np.float64)
    if arr.size == 0:
        raise InvalidInputError("tta_score needs at least one view score")
    return float(arr.mean())


def tta_scores(per_view: Sequence[np.ndarray]) -> np.ndarray:
    """Patch-wise mean over views; ``per_view[v][i]`` is view v of patch i."""
    if len(per_view) == 0:
        raise InvalidInputError("tta_scores needs at least one view")
    stacked = np.stack([np.asarray(v, dtype=np.float64) for v in per_view])
    return stacked.mean(axis=0)


def default_mode(objective: Optional[str]) -> str:
    return "knn" if objective is None else DEFAULT_MODE[objective]


def score_matrix(matrix: Rows, mode: str, model: Optional[TrainResult] = None,
                 reference: Optional[Rows] = None, knn: KnnConfig = KnnConfig()) -> np.ndarray:
    """Score every row of ``matrix`` with the given mode.

    ``knn`` needs ``reference``; the head modes need ``model``;
    ``embedding_knn`` needs both and compares head embeddings.

    Raises:
        ConfigurationError: If the mode is unknown or its inputs are missing
            or incompatible with the model's objective.
    """
    if mode not in SCORE_MODES:
        raise ConfigurationError(f"Unknown score mode '{mode}'. Choose from: {', '.join(SCORE_MODES)}")
    rows = _rows(matrix)
    if mode in ("knn", "embedding_knn") and reference is None:
        raise ConfigurationError(f"Score mode '{mode}' needs reference features")
    if mode == "knn":
        return knn_scores(rows, reference, knn)
    if model is None:
        raise ConfigurationError(f"Score mode '{mode}' needs a trained model")
    params = model.params
    if mode == "classifier":
        return classifier_score(params, rows)
    if mode == "reconstruction":
        if model.objective != "autoencoder":
            raise ConfigurationError("Reconstruction scoring needs an autoencoder checkpoint")
        return reconstruction_error(params, rows)
    if model.objective in ("bce", "autoencoder"):
        raise ConfigurationError(f"Score mode '{mode}' needs an embedding head, got '{model.objective}'")
    embedded = forward(params, rows)
    if mode == "radius":
        return hsc_radius(embedded)
    if mode == "center_distance":
        if model.center is None:
            raise ConfigurationError("Checkpoint carries no center vector")
        return center_distance(embedded, model.center)
    return knn_scores(embedded, forward(params, _rows(reference)), knn)
