"""Functional API over the pipeline stages.

Each function runs one stage with a :class:`~histoad.config.PipelineConfig`,
the way the CLI subcommands do, so scripts can chain stages in memory:

    >>> from histoad import api, load_config
    >>> cfg = load_config()
    >>> raster = load_raster("slide.png")
    >>> mask, coords = api.tile_slide(raster, cfg)
    >>> views = api.embed_slide(raster, coords, cfg, n_views=1, seed=0)
    >>> table = api.score_views(views, cfg, reference=normal_features)
    >>> api.aggregate_scores(table, cfg)
    {'slide': 0.42}
"""

from __future__ import annotations

import logging
from dataclasses import replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .config import PipelineConfig
from .errors import ConfigurationError, InvalidInputError
from .evaluation.annotations import Region, patch_labels_from_annotations
from .evaluation.crossval import CrossvalData, evaluate_split, run_crossval
from .evaluation.metrics import artifact_auroc, auroc_arrays
from .evaluation.report import EvalReport
from .features.io import FeatureMatrix, Label, ManifestEntry, PatchMeta, TissueClass, load_entries
from .features.oe import dedup_oe, generator_from_state, make_rng_state
from .models.losses import OE_OBJECTIVES
from .models.trainer import TrainingPools, TrainResult, train
from .preprocessing.augment import generate_views
from .preprocessing.embed import ColorStatsEmbedder, PatchEmbedder
from .preprocessing.raster import SlideRaster, TissueMask, crop
from .preprocessing.stainnorm import LabStats, compute_stats, normalize_patch, pooled_target
from .preprocessing.tiler import PatchCoord, detect_tissue, enumerate_patches
from .scoring.aggregate import ScoreTable, aggregate_table
from .scoring.heatmap import HeatmapCanvas, canvas_from_scores
from .scoring.scorers import default_mode, score_matrix, tta_scores

logger = logging.getLogger(__name__)


def tile_slide(raster: SlideRaster, cfg: PipelineConfig = PipelineConfig(),
               heatmap: bool = False) -> Tuple[TissueMask, List[PatchCoord]]:
    """Tissue mask and kept patch coordinates of one slide.

    ``heatmap=True`` uses the overlapping heatmap grid instead of the
    training grid.
    """
    mask = detect_tissue(raster, cfg.tissue)
    spec = cfg.heatmap_tile_spec() if heatmap else cfg.tile
    coords = enumerate_patches(mask, spec, slide_id=raster.id)
    if not coords:
        logger.warning("Slide %s: no patch passes the background filter", raster.id)
    return mask, coords


def compute_stain_target(rasters: Sequence[SlideRaster], cfg: PipelineConfig = PipelineConfig()) -> LabStats:
    """Pooled lαβ statistics over the tissue of several slides."""
    stats = []
    for raster in rasters:
        mask = detect_tissue(raster, cfg.tissue)
        if mask.tissue_fraction == 0.0:
            logger.warning("Slide %s has no tissue; skipped for the stain target", raster.id)
            continue
        stats.append(compute_stats(raster.pixels, mask))
    if not stats:
        raise InvalidInputError("No slide with tissue to compute a stain target from")
    return pooled_target(stats)


def embed_slide(raster: SlideRaster, coords: Sequence[PatchCoord], cfg: PipelineConfig = PipelineConfig(),
                embedder: Optional[PatchEmbedder] = None, n_views: Optional[int] = None,
                seed: int = 0, tissue_class: TissueClass = TissueClass.EVAL,
                label: Label = Label.UNKNOWN) -> List[FeatureMatrix]:
    """Embed each patch under ``n_views`` augmented views (default ``cfg.tta.n_views``).

    Patches are stain normalized first when ``cfg.stain_target`` is set, with
    source statistics computed per patch over its tissue pixels. Returns one
    matrix per view, rows aligned with ``coords``.
    """
    embedder = embedder or ColorStatsEmbedder()
    n_views = n_views or cfg.tta.n_views
    size = cfg.tile.patch_size
    mask = None
    if cfg.stain_target is not None and coords:
        mask = detect_tissue(raster, cfg.tissue)
    gen = generator_from_state(make_rng_state(seed))
    rows = np.zeros((n_views, len(coords), embedder.dim), dtype=np.float32)
    for i, coord in enumerate(coords):
        patch = crop(raster, coord.x, coord.y, size)
        if mask is not None:
            bits = mask.bits[coord.y:coord.y + size, coord.x:coord.x + size]
            patch = normalize_patch(patch, cfg.stain_target, TissueMask(bits.copy()))
        for v, view in enumerate(generate_views(patch, n_views, gen, cfg.augment)):
            rows[v, i] = embedder.embed(view)
    meta = [PatchMeta(c.slide_id, c.x, c.y, tissue_class, label) for c in coords]
    if not coords:
        return [FeatureMatrix.empty(embedder.dim) for _ in range(n_views)]
    return [FeatureMatrix(rows=rows[v], meta=list(meta)) for v in range(n_views)]


def label_features(matrix: FeatureMatrix, regions: Sequence[Region], patch_size: int) -> FeatureMatrix:
    """Copy of ``matrix`` with patch labels taken from annotation regions."""
    coords = [PatchCoord(m.slide_id, m.x, m.y) for m in matrix.meta]
    truth = patch_labels_from_annotations(coords, regions, patch_size)
    meta = [PatchMeta(m.slide_id, m.x, m.y, m.tissue_class, lab)
            for m, lab in zip(matrix.meta, truth.labels())]
    return FeatureMatrix(rows=matrix.rows, meta=meta)


def split_entries(entries: Sequence[ManifestEntry]) -> Dict[str, List[ManifestEntry]]:
    """Group manifest entries into ``normal``, ``anomalous``, ``near`` and ``far``."""
    groups: Dict[str, List[ManifestEntry]] = {"normal": [], "anomalous": [], "near": [], "far": []}
    for e in entries:
        if e.tissue_class is TissueClass.NEAR_OE:
            groups["near"].append(e)
        elif e.tissue_class is TissueClass.FAR_OE:
            groups["far"].append(e)
        elif e.label is Label.ANOMALOUS:
            groups["anomalous"].append(e)
        elif e.label is Label.NORMAL:
            groups["normal"].append(e)
        else:
            logger.warning("Manifest entry %s has no usable label; ignored", e.slide_id)
    return groups


def _load_optional(entries: Sequence[ManifestEntry], dim: int) -> Optional[FeatureMatrix]:
    return load_entries(entries, dim) if entries else None


def train_model(normal: FeatureMatrix, cfg: PipelineConfig = PipelineConfig(),
                near: Optional[FeatureMatrix] = None, far: Optional[FeatureMatrix] = None) -> TrainResult:
    """Deduplicate the OE pools against the normals, then train ``cfg.train.objective``."""
    train_cfg = cfg.train.for_objective(cfg.train.objective)
    if train_cfg.objective in OE_OBJECTIVES:
        near = dedup_oe(near, normal, cfg.oe_filter) if near is not None else None
        far = dedup_oe(far, normal, cfg.oe_filter) if far is not None else None
    elif near is not None or far is not None:
        logger.info("Objective %s ignores the OE pools", train_cfg.objective)
        near = far = None
    sampler = replace(cfg.oe_sampler, batch_size=train_cfg.batch_size, seed=train_cfg.seed)
    return train(TrainingPools(normal, near, far), train_cfg, cfg.model, sampler)


def train_from_manifest(entries: Sequence[ManifestEntry], cfg: PipelineConfig = PipelineConfig()) -> TrainResult:
    groups = split_entries(entries)
    if not groups["normal"]:
        raise InvalidInputError("The manifest lists no normal slides to train on")
    normal = load_entries(groups["normal"])
    return train_model(normal, cfg, _load_optional(groups["near"], normal.dim),
                       _load_optional(groups["far"], normal.dim))


def score_features(matrix: FeatureMatrix, cfg: PipelineConfig = PipelineConfig(),
                   model: Optional[TrainResult] = None, reference: Optional[FeatureMatrix] = None,
                   mode: Optional[str] = None) -> ScoreTable:
    """Patch scores of ``matrix``; the mode defaults to the model's objective or kNN."""
    mode = mode or default_mode(model.objective if model else None)
    return ScoreTable.from_meta(matrix.meta, score_matrix(matrix, mode, model, reference, cfg.knn))


def score_views(views: Sequence[FeatureMatrix], cfg: PipelineConfig = PipelineConfig(),
                model: Optional[TrainResult] = None, reference: Optional[FeatureMatrix] = None,
                mode: Optional[str] = None) -> ScoreTable:
    """Test-time augmented scores: each patch's mean over its views.

    Raises:
        InvalidInputError: If the views do not share the same patches in the same order.
    """
    if not views:
        raise InvalidInputError("Need at least one view")
    keys = [(m.slide_id, m.x, m.y) for m in views[0].meta]
    for v in views[1:]:
        if [(m.slide_id, m.x, m.y) for m in v.meta] != keys:
            raise InvalidInputError("View feature files list different patches")
    mode = mode or default_mode(model.objective if model else None)
    per_view = [score_matrix(v, mode, model, reference, cfg.knn) for v in views]
    return ScoreTable.from_meta(views[0].meta, tta_scores(per_view))


def aggregate_scores(table: ScoreTable, cfg: PipelineConfig = PipelineConfig()) -> Dict[str, float]:
    return aggregate_table(table, cfg.aggregation)


def build_heatmap(table: ScoreTable, width: int, height: int, slide_id: Optional[str] = None,
                  cfg: PipelineConfig = PipelineConfig()) -> HeatmapCanvas:
    """Canvas of one slide's patch scores."""
    slides = table.by_slide()
    if slide_id is None:
        if len(slides) != 1:
            raise InvalidInputError(f"Score table holds {len(slides)} slides; name one")
        slide_id = next(iter(slides))
    if slide_id not in slides:
        raise InvalidInputError(f"Slide '{slide_id}' not in score table")
    sub = slides[slide_id]
    return canvas_from_scores(width, height, sub.coords, sub.scores, cfg.tile.patch_size)


def evaluate_slide_scores(slide_scores: Mapping[str, float], entries: Sequence[ManifestEntry],
                          cfg: PipelineConfig = PipelineConfig(), method: str = "scores") -> EvalReport:
    """Slide AUROC, group AUROCs and thresholds of precomputed slide scores.

    Slides missing from ``entries`` or labelled ``unknown`` are ignored.
    """
    labels = {e.slide_id: e.label for e in entries}
    groups = {e.slide_id: e.diagnosis_group for e in entries if e.diagnosis_group}
    known = {s: v for s, v in slide_scores.items() if labels.get(s) in (Label.NORMAL, Label.ANOMALOUS)}
    dropped = len(slide_scores) - len(known)
    if dropped:
        logger.warning("Ignoring %d scored slides without a normal/anomalous label", dropped)
    anomalous = [s for s in known if labels[s] is Label.ANOMALOUS]
    fold = evaluate_split(known, anomalous, groups, cfg.eval.sensitivity_targets)
    return EvalReport(method=method, folds=[fold])


def patch_metrics(table: ScoreTable, truth_by_slide: Mapping[str, Tuple[List[Label], np.ndarray]]
                  ) -> Tuple[Optional[float], Optional[float]]:
    """Patch-level anomaly AUROC and artifact AUROC from per-slide ground truth.

    ``truth_by_slide`` maps a slide id to its patch labels and artifact flags,
    aligned with that slide's rows in ``table``.
    """
    scores, anomalous, normal, artifact = [], [], [], []
    for sid, sub in table.by_slide().items():
        if sid not in truth_by_slide:
            continue
        labels, flags = truth_by_slide[sid]
        scores.extend(sub.scores.tolist())
        anomalous.extend(l is Label.ANOMALOUS for l in labels)
        normal.extend(l is Label.NORMAL for l in labels)
        artifact.extend(bool(f) for f in flags)
    scores_arr = np.asarray(scores)
    anomalous_arr, normal_arr = np.asarray(anomalous, dtype=bool), np.asarray(normal, dtype=bool)
    artifact_arr = np.asarray(artifact, dtype=bool)
    patch = None
    known = anomalous_arr | normal_arr
    if anomalous_arr.any() and normal_arr.any():
        patch = auroc_arrays(scores_arr[known], anomalous_arr[known])
    art = None
    if artifact_arr.any() and (normal_arr & ~artifact_arr).any():
        art = artifact_auroc(scores_arr, artifact_arr, normal_arr)
    return patch, art


def crossval_from_manifest(entries: Sequence[ManifestEntry], cfg: PipelineConfig = PipelineConfig(),
                           jobs: int = 1) -> EvalReport:
    groups = split_entries(entries)
    if not groups["normal"] or not groups["anomalous"]:
        raise InvalidInputError("Cross-validation needs normal and anomalous slides in the manifest")
    normal = load_entries(groups["normal"])
    data = CrossvalData(
        normal=normal,
        anomalous=load_entries(groups["anomalous"], normal.dim),
        near=_load_optional(groups["near"], normal.dim),
        far=_load_optional(groups["far"], normal.dim),
        groups={e.slide_id: e.diagnosis_group for e in groups["anomalous"] if e.diagnosis_group},
    )
    if cfg.eval.method in OE_OBJECTIVES and data.near is None and data.far is None:
        raise ConfigurationError(f"Method '{cfg.eval.method}' needs near or far OE slides in the manifest")
    return run_crossval(data, cfg.crossval_settings(), jobs=jobs)
