"""K-fold cross-validation over normal slides.

Normal slides are split into folds; each fold's model is trained on the other
folds' normal slides and tested on the held-out normals plus every anomalous
slide (anomalous slides are never trained on). Folds run independently, in
parallel when ``jobs > 1``, and are reported in fold order, so the report does
not depend on scheduling.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..errors import ConfigurationError, InvalidInputError
from ..features.io import FeatureMatrix, Label
from ..features.oe import (
    OeFilterConfig,
    OeSamplerConfig,
    dedup_oe,
    generator_from_state,
    make_rng_state,
    spawn_seeds,
)
from ..models.losses import OBJECTIVES, OE_OBJECTIVES
from ..models.trainer import ModelConfig, TrainConfig, TrainingPools, train
from ..scoring.aggregate import AggregationConfig, ScoreTable, aggregate_table
from ..scoring.scorers import KnnConfig, default_mode, knn_scores, score_matrix
from .metrics import LabeledScores, auroc, auroc_arrays, group_report, sensitivity_threshold
from .report import EvalReport, FoldResult

logger = logging.getLogger(__name__)

METHODS = ("knn",) + OBJECTIVES


@dataclass(frozen=True)
class FoldPlan:
    """Assignment of normal slides to test folds."""
    k: int
    seed: int
    assignments: Dict[str, int]

    def test_ids(self, fold: int) -> List[str]:
        return sorted(sid for sid, f in self.assignments.items() if f == fold)

    def train_ids(self, fold: int) -> List[str]:
        return sorted(sid for sid, f in self.assignments.items() if f != fold)

    def sizes(self) -> List[int]:
        return [len(self.test_ids(i)) for i in range(self.k)]


def make_folds(normal_slide_ids: Sequence[str], k: int = 5, seed: int = 0) -> FoldPlan:
    """Seeded shuffle of the sorted ids, then round-robin assignment.

    Raises:
        InvalidInputError: If there are fewer slides than folds.
    """
    ids = sorted(set(normal_slide_ids))
    if k < 2:
        raise InvalidInputError(f"Need at least 2 folds, got {k}")
    if len(ids) < k:
        raise InvalidInputError(f"Too few normal slides for {k} folds: {len(ids)}")
    order = generator_from_state(make_rng_state(seed)).permutation(len(ids))
    return FoldPlan(k=k, seed=seed, assignments={ids[j]: i % k for i, j in enumerate(order)})


@dataclass(frozen=True)
class EvalConfig:
    """Cross-validation protocol.

    ``method`` is ``knn`` (reference = training normals) or a training
    objective. ``score_mode`` overrides the objective's default scoring.
    """
    folds: int = 5
    seed: int = 0
    sensitivity_targets: Tuple[float, ...] = (1.0, 0.99, 0.95)
    method: str = "knn"
    score_mode: Optional[str] = None
    max_train_slides: Optional[int] = None
    knn_max_reference: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "sensitivity_targets", tuple(float(t) for t in self.sensitivity_targets))
        if self.method not in METHODS:
            raise ConfigurationError(f"Unknown method '{self.method}'. Choose from: {', '.join(METHODS)}")
        if self.folds < 2:
            raise ConfigurationError(f"folds must be >= 2, got {self.folds}")
        if any(not 0.0 < t <= 1.0 for t in self.sensitivity_targets):
            raise ConfigurationError("sensitivity targets must lie in (0, 1]")
        for name in ("max_train_slides", "knn_max_reference"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ConfigurationError(f"{name} must be >= 1 when set, got {value}")


@dataclass(frozen=True)
class CrossvalSettings:
    """Everything a fold needs besides data."""
    eval: EvalConfig = EvalConfig()
    train: TrainConfig = TrainConfig()
    model: ModelConfig = ModelConfig()
    knn: KnnConfig = KnnConfig()
    aggregation: AggregationConfig = AggregationConfig()
    oe_filter: OeFilterConfig = OeFilterConfig()
    oe_sampler: OeSamplerConfig = OeSamplerConfig()


@dataclass
class CrossvalData:
    """Normal slides to fold, anomalous slides to test, optional OE pools."""
    normal: FeatureMatrix
    anomalous: FeatureMatrix
    near: Optional[FeatureMatrix] = None
    far: Optional[FeatureMatrix] = None
    groups: Dict[str, str] = field(default_factory=dict)


def _sample_sorted(n: int, cap: Optional[int], seed: int) -> np.ndarray:
    if cap is None or n <= cap:
        return np.arange(n)
    return np.sort(generator_from_state(make_rng_state(seed)).choice(n, size=cap, replace=False))


def fit_and_score(train_normal: FeatureMatrix, test: FeatureMatrix, settings: CrossvalSettings, seed: int,
                  near: Optional[FeatureMatrix] = None, far: Optional[FeatureMatrix] = None) -> np.ndarray:
    """Fit the configured method on ``train_normal`` (plus OE pools) and score ``test``."""
    method = settings.eval.method
    if method == "knn":
        keep = _sample_sorted(len(train_normal), settings.eval.knn_max_reference, seed)
        return knn_scores(test, train_normal.rows[keep], settings.knn)

    cfg = replace(settings.train.for_objective(method), seed=seed)
    if method in OE_OBJECTIVES:
        near = dedup_oe(near, train_normal, settings.oe_filter) if near is not None else None
        far = dedup_oe(far, train_normal, settings.oe_filter) if far is not None else None
    result = train(TrainingPools(train_normal, near, far), cfg, settings.model,
                   replace(settings.oe_sampler, batch_size=cfg.batch_size, seed=seed))
    mode = settings.eval.score_mode or default_mode(method)
    return score_matrix(test, mode, model=result, reference=train_normal, knn=settings.knn)


def patch_auroc_of(test: FeatureMatrix, scores: np.ndarray) -> Optional[float]:
    """Patch AUROC over rows with a known label, or None when a class is missing."""
    known = np.array([m.label is not Label.UNKNOWN for m in test.meta], dtype=bool)
    anomalous = np.array([m.label is Label.ANOMALOUS for m in test.meta], dtype=bool)
    if not known.any() or anomalous[known].all() or not anomalous[known].any():
        return None
    return auroc_arrays(scores[known], anomalous[known])


def evaluate_split(slide_scores: Mapping[str, float], anomalous_ids: Sequence[str],
                   groups: Mapping[str, str], targets: Sequence[float], fold: int = 0,
                   n_train_slides: int = 0) -> FoldResult:
    """Slide-level metrics of one test split."""
    anomalous_set = set(anomalous_ids)
    sids = sorted(slide_scores)
    data = LabeledScores(
        [slide_scores[s] for s in sids],
        [Label.ANOMALOUS if s in anomalous_set else Label.NORMAL for s in sids],
        [groups.get(s) if s in anomalous_set else None for s in sids],
    )
    has_groups = any(g for g in data.groups)
    return FoldResult(
        fold=fold,
        n_train_slides=n_train_slides,
        n_test_normal=data.n_normal,
        n_test_anomalous=data.n_anomalous,
        slide_auroc=auroc(data),
        group_aurocs=group_report(data) if has_groups else {},
        thresholds=[sensitivity_threshold(data, t) for t in targets],
        slide_scores=dict(slide_scores),
    )


def _run_fold(fold: int, plan: FoldPlan, data: CrossvalData, settings: CrossvalSettings,
              fold_seed: int) -> FoldResult:
    by_slide = data.normal.by_slide()
    train_ids = plan.train_ids(fold)
    keep = _sample_sorted(len(train_ids), settings.eval.max_train_slides, fold_seed)
    train_ids = [train_ids[i] for i in keep]
    train_normal = FeatureMatrix.concat([by_slide[s] for s in train_ids])
    test = FeatureMatrix.concat([by_slide[s] for s in plan.test_ids(fold)] + [data.anomalous])

    logger.info("Fold %d: %d training slides, %d test patches", fold, len(train_ids), len(test))
    scores = fit_and_score(train_normal, test, settings, fold_seed, data.near, data.far)
    slide_scores = aggregate_table(ScoreTable.from_meta(test.meta, scores), settings.aggregation)
    result = evaluate_split(slide_scores, data.anomalous.slide_ids(), data.groups,
                            settings.eval.sensitivity_targets, fold, len(train_ids))
    result.patch_auroc = patch_auroc_of(test, scores)
    return result


def run_crossval(data: CrossvalData, settings: CrossvalSettings = CrossvalSettings(),
                 jobs: int = 1) -> EvalReport:
    """Cross-validate ``settings.eval.method``.

    Raises:
        InvalidInputError: If there are too few normal slides or no anomalous slides.
    """
    if len(data.anomalous) == 0:
        raise InvalidInputError("Cross-validation needs at least one anomalous slide")
    overlap = set(data.normal.slide_ids()) & set(data.anomalous.slide_ids())
    if overlap:
        raise InvalidInputError(f"Slides listed as both normal and anomalous: {sorted(overlap)}")
    ev = settings.eval
    plan = make_folds(data.normal.slide_ids(), ev.folds, ev.seed)
    fold_seeds = spawn_seeds(ev.seed, ev.folds)
    logger.info("Cross-validating '%s' over %d folds (sizes %s)", ev.method, ev.folds, plan.sizes())

    def run(i: int) -> FoldResult:
        return _run_fold(i, plan, data, settings, fold_seeds[i])

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            folds = list(pool.map(run, range(ev.folds)))
    else:
        folds = [run(i) for i in range(ev.folds)]
    return EvalReport(method=ev.method, folds=folds, seed=ev.seed)
