"""Command-line interface.

Subcommands run one pipeline stage each and exchange files: patch CSVs, mask
PNGs, feature files, checkpoints, score CSVs and JSON reports.

Typical usage examples:
    histoad synth --out-dir data --seed 1
    histoad crossval --manifest data/manifest.csv --seed 1 --method knn --output report.json
    histoad tile slides/*.png --out-dir tiles --jobs 4
    histoad stain-target --manifest train_slides.csv --output target.json
    histoad train --manifest data/manifest.csv --seed 3 --objective bce --output model.hadm
    histoad score data/features/anomalous-0000.hadf --checkpoint model.hadm --output scores.csv
    histoad aggregate scores.csv --output slides.csv
    histoad eval --slide-scores slides.csv --manifest data/manifest.csv

Exit codes: 0 on success, 2 for usage or input errors, 3 when training
diverges.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, List, Optional, Sequence

from . import api
from .config import PipelineConfig, load_config
from .errors import ConfigurationError, InvalidInputError, NumericalError
from .evaluation.annotations import patch_labels_from_annotations, read_annotations, write_annotations
from .features.io import FeatureMatrix, Label, TissueClass, read_features, read_manifest, write_features
from .features.oe import spawn_seeds
from .models.checkpoint import load_checkpoint, save_checkpoint, write_loss_trace
from .preprocessing.raster import load_raster, save_mask_png, save_raster
from .preprocessing.stainnorm import LabStats
from .preprocessing.tiler import read_patch_csv, write_patch_csv
from .scoring.aggregate import ScoreTable, read_slide_scores, write_slide_scores
from .scoring.heatmap import HeatmapRenderer, write_grid
from .scoring.scorers import SCORE_MODES
from .synth.generator import SynthSpec, gen_features, gen_raster, write_pools
from .validation import ConfigValidator

logger = logging.getLogger("histoad")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", type=Path,
                        help="Pipeline config JSON (default: $HISTOAD_CONFIG or the bundled defaults)")
    common.add_argument("--jobs", "-j", type=int, default=1, help="Worker threads for per-slide work")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", "-v", action="store_true", help="Log debug messages")
    verbosity.add_argument("--quiet", "-q", action="store_true", help="Log warnings and errors only")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog="histoad",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("tile", parents=[common], help="Detect tissue and list patches")
    p.add_argument("slides", nargs="+", type=Path, help="Slide rasters (PNG or PPM)")
    p.add_argument("--out-dir", "-o", type=Path, required=True)
    p.add_argument("--heatmap", action="store_true", help="Use the overlapping heatmap grid")
    p.add_argument("--patch-size", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--max-background", type=float)
    p.set_defaults(handler=cmd_tile)

    p = sub.add_parser("stain-target", parents=[common], help="Pooled stain statistics of reference slides",
                       description="Pool per-slide stain statistics into a normalization target. "
                                   "Slides come from the normal_target rows of --manifest (paths "
                                   "pointing at rasters) and from any raster paths given directly.")
    p.add_argument("slides", nargs="*", type=Path)
    p.add_argument("--manifest", "-m", type=Path, nargs="+", default=[],
                   help="Training manifest(s); normal_target rows are used")
    p.add_argument("--output", "-o", type=Path, required=True, help="LabStats JSON file")
    p.set_defaults(handler=cmd_stain_target)

    p = sub.add_parser("embed", parents=[common], help="Embed patches of slide rasters")
    p.add_argument("slides", nargs="+", type=Path)
    p.add_argument("--patches-dir", type=Path,
                   help="Directory with <slide>_patches.csv from 'tile' (default: tile on the fly)")
    p.add_argument("--out-dir", "-o", type=Path, required=True)
    p.add_argument("--views", type=int, help="Views per patch (default: tta.n_views)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stain-target", type=Path, help="LabStats JSON (overrides the config)")
    p.add_argument("--heatmap", action="store_true", help="Embed the overlapping heatmap grid")
    p.add_argument("--tissue-class", default=TissueClass.EVAL.value,
                   choices=[t.value for t in TissueClass])
    p.add_argument("--label", default=Label.UNKNOWN.value, choices=[l.value for l in Label])
    p.set_defaults(handler=cmd_embed)

    p = sub.add_parser("train", parents=[common], help="Train a scoring head")
    p.add_argument("--manifest", "-m", type=Path, nargs="+", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--objective")
    p.add_argument("--steps", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--output", "-o", type=Path, required=True, help="Checkpoint file")
    p.add_argument("--loss-trace", type=Path, help="Loss CSV (default: <output>.loss.csv)")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("score", parents=[common], help="Score patch features")
    p.add_argument("features", nargs="+", type=Path,
                   help="Feature files; several files are views of the same patches and are averaged")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--checkpoint", type=Path)
    source.add_argument("--reference", type=Path, nargs="+", help="Normal reference feature files (kNN)")
    p.add_argument("--embedding-reference", type=Path, nargs="+",
                   help="Normal features for embedding_knn mode")
    p.add_argument("--mode", choices=SCORE_MODES)
    p.add_argument("--k", type=int)
    p.add_argument("--output", "-o", type=Path, required=True)
    p.set_defaults(handler=cmd_score)

    p = sub.add_parser("aggregate", parents=[common], help="Slide scores from patch scores")
    p.add_argument("scores", type=Path)
    p.add_argument("--top-fraction", type=float)
    p.add_argument("--output", "-o", type=Path, required=True)
    p.set_defaults(handler=cmd_aggregate)

    p = sub.add_parser("heatmap", parents=[common], help="Render a slide heatmap")
    p.add_argument("scores", type=Path)
    p.add_argument("--slide", type=Path, help="Slide raster (gives the size; enables --overlay)")
    p.add_argument("--size", type=int, nargs=2, metavar=("WIDTH", "HEIGHT"))
    p.add_argument("--slide-id")
    p.add_argument("--colormap")
    p.add_argument("--output", "-o", type=Path, required=True, help="RGBA PNG")
    p.add_argument("--grid", type=Path, help="Raw averaged grid as a D=1 feature file")
    p.add_argument("--overlay", type=Path, help="Heatmap blended onto the slide")
    p.set_defaults(handler=cmd_heatmap)

    p = sub.add_parser("eval", parents=[common], help="Evaluate slide scores")
    p.add_argument("--slide-scores", type=Path, required=True)
    p.add_argument("--manifest", "-m", type=Path, required=True)
    p.add_argument("--patch-scores", type=Path, help="Patch scores for patch-level AUROC")
    p.add_argument("--annotations", type=Path, help="Directory of <slide_id>.json annotation files")
    p.add_argument("--output", "-o", type=Path, help="Report JSON")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("crossval", parents=[common], help="K-fold cross-validation")
    p.add_argument("--manifest", "-m", type=Path, nargs="+", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--method")
    p.add_argument("--folds", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--output", "-o", type=Path, help="Report JSON")
    p.set_defaults(handler=cmd_crossval)

    p = sub.add_parser("synth", parents=[common], help="Generate synthetic features or rasters")
    p.add_argument("--spec", type=Path, help="SynthSpec JSON (default: built-in spec)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", "-o", type=Path, required=True)
    p.add_argument("--raster-layout", type=Path,
                   help='Layout JSON {"width", "height", "slide_id", "regions": [...]} for a toy raster')
    p.set_defaults(handler=cmd_synth)
    return parser


def _configure_logging(args: argparse.Namespace) -> None:
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def _load(args: argparse.Namespace) -> PipelineConfig:
    cfg = load_config(args.config)
    result = ConfigValidator().validate(cfg)
    for warning in result.warnings:
        logger.debug("Config: %s", warning)
    if not result.is_valid:
        raise ConfigurationError("Invalid config: " + "; ".join(result.errors))
    return cfg


def _map(func: Callable, items: Sequence, jobs: int) -> List:
    if jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(func, items))
    return [func(item) for item in items]


def cmd_tile(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    cfg = cfg.override("tile", patch_size=args.patch_size, stride=args.stride,
                       max_background_fraction=args.max_background)
    args.out_dir.mkdir(parents=True, exist_ok=True)

    def run(path: Path):
        raster = load_raster(path)
        mask, coords = api.tile_slide(raster, cfg, heatmap=args.heatmap)
        write_patch_csv(coords, args.out_dir / f"{raster.id}_patches.csv")
        save_mask_png(mask, args.out_dir / f"{raster.id}_mask.png")
        return raster.id, len(coords)

    for slide_id, n in _map(run, args.slides, args.jobs):
        logger.info("%s: %d patches", slide_id, n)
    return EXIT_OK


def cmd_stain_target(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    paths = [e.path for e in _entries(args.manifest) if e.tissue_class is TissueClass.NORMAL_TARGET]
    paths += list(args.slides)
    if not paths:
        raise InvalidInputError("stain-target needs raster paths or a manifest with normal_target rows")
    rasters = _map(load_raster, paths, args.jobs)
    target = api.compute_stain_target(rasters, cfg)
    args.output.write_text(target.to_json() + "\n", encoding="utf-8")
    logger.info("Stain target from %d slides: mean %s std %s", len(rasters), target.mean, target.std)
    return EXIT_OK


def cmd_embed(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    if args.stain_target:
        if not args.stain_target.exists():
            raise FileNotFoundError(f"Stain target file not found: {args.stain_target}")
        cfg = cfg.with_stain_target(LabStats.from_json(args.stain_target.read_text(encoding="utf-8")))
    args.out_dir.mkdir(parents=True, exist_ok=True)
    seeds = spawn_seeds(args.seed, len(args.slides))

    def run(item):
        path, seed = item
        raster = load_raster(path)
        if args.patches_dir:
            coords = read_patch_csv(args.patches_dir / f"{raster.id}_patches.csv")
        else:
            _, coords = api.tile_slide(raster, cfg, heatmap=args.heatmap)
        views = api.embed_slide(raster, coords, cfg, n_views=args.views, seed=seed,
                                tissue_class=TissueClass(args.tissue_class), label=Label(args.label))
        for v, matrix in enumerate(views):
            write_features(matrix, args.out_dir / f"{raster.id}_view{v:02d}.hadf")
        return raster.id, len(coords), len(views)

    for slide_id, n, n_views in _map(run, list(zip(args.slides, seeds)), args.jobs):
        logger.info("%s: embedded %d patches x %d views", slide_id, n, n_views)
    return EXIT_OK


def _entries(manifests: Sequence[Path]):
    return [e for m in manifests for e in read_manifest(m)]


def cmd_train(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    cfg = cfg.override("train", seed=args.seed, objective=args.objective, steps=args.steps,
                       learning_rate=args.learning_rate, batch_size=args.batch_size)
    result = api.train_from_manifest(_entries(args.manifest), cfg)
    save_checkpoint(result, args.output)
    trace_path = args.loss_trace or args.output.with_name(args.output.name + ".loss.csv")
    write_loss_trace(result.loss_trace, trace_path)
    logger.info("Trained %s head, final loss %.6f -> %s", result.objective, result.final_loss, args.output)
    return EXIT_OK


def _read_all(paths: Sequence[Path]) -> FeatureMatrix:
    matrices = [read_features(p) for p in paths]
    return FeatureMatrix.concat(matrices)


def cmd_score(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    cfg = cfg.override("knn", k=args.k)
    views = [read_features(p) for p in args.features]
    model = load_checkpoint(args.checkpoint) if args.checkpoint else None
    reference = None
    if args.reference:
        reference = _read_all(args.reference)
    elif args.embedding_reference:
        reference = _read_all(args.embedding_reference)
    table = api.score_views(views, cfg, model=model, reference=reference, mode=args.mode)
    table.to_csv(args.output)
    logger.info("Scored %d patches from %d view(s) -> %s", len(table), len(views), args.output)
    return EXIT_OK


def cmd_aggregate(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    cfg = cfg.override("aggregation", top_fraction=args.top_fraction)
    slide_scores = api.aggregate_scores(ScoreTable.from_csv(args.scores), cfg)
    write_slide_scores(slide_scores, args.output)
    logger.info("Aggregated %d slides -> %s", len(slide_scores), args.output)
    return EXIT_OK


def cmd_heatmap(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    cfg = cfg.override("heatmap", colormap=args.colormap)
    raster = load_raster(args.slide) if args.slide else None
    if raster is not None:
        width, height = raster.width, raster.height
    elif args.size:
        width, height = args.size
    else:
        raise InvalidInputError("heatmap needs --slide or --size")
    if args.overlay and raster is None:
        raise InvalidInputError("--overlay needs --slide")
    slide_id = args.slide_id or (raster.id if raster is not None else None)
    canvas = api.build_heatmap(ScoreTable.from_csv(args.scores), width, height, slide_id, cfg)
    renderer = HeatmapRenderer.from_config(cfg.heatmap)
    renderer.render_to_file(canvas, args.output)
    if args.grid:
        write_grid(canvas, args.grid, slide_id or "")
    if args.overlay:
        renderer.render_overlay(canvas, raster, cfg.heatmap.overlay_opacity).save(args.overlay)
    logger.info("Heatmap %dx%d -> %s", width, height, args.output)
    return EXIT_OK


def _emit_report(report, output: Optional[Path]) -> None:
    if output:
        output.write_text(report.to_json(), encoding="utf-8")
    sys.stdout.write(report.format_table())


def cmd_eval(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    entries = read_manifest(args.manifest)
    report = api.evaluate_slide_scores(read_slide_scores(args.slide_scores), entries, cfg)
    if args.patch_scores:
        if not args.annotations:
            raise InvalidInputError("--patch-scores needs --annotations")
        table = ScoreTable.from_csv(args.patch_scores)
        slide_labels = {e.slide_id: e.label for e in entries}
        truth = {}
        for sid, sub in table.by_slide().items():
            path = args.annotations / f"{sid}.json"
            if path.exists():
                labels = patch_labels_from_annotations(sub.coords, read_annotations(path), cfg.tile.patch_size)
                truth[sid] = (labels.labels(), labels.artifact)
            elif slide_labels.get(sid) is Label.NORMAL:
                truth[sid] = ([Label.NORMAL] * len(sub), [False] * len(sub))
        report.folds[0].patch_auroc, report.folds[0].artifact_auroc = api.patch_metrics(table, truth)
    _emit_report(report, args.output)
    return EXIT_OK


def cmd_crossval(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    cfg = cfg.override("eval", seed=args.seed, method=args.method, folds=args.folds)
    cfg = cfg.override("train", steps=args.steps)
    report = api.crossval_from_manifest(_entries(args.manifest), cfg, jobs=args.jobs)
    _emit_report(report, args.output)
    return EXIT_OK


def cmd_synth(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    args.out_dir.mkdir(parents=True, exist_ok=True)
    if args.raster_layout:
        if not args.raster_layout.exists():
            raise FileNotFoundError(f"Layout file not found: {args.raster_layout}")
        try:
            layout = json.loads(args.raster_layout.read_text(encoding="utf-8"))
            width, height = int(layout["width"]), int(layout["height"])
            slide_id = str(layout.get("slide_id", args.raster_layout.stem))
            regions = layout["regions"]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise InvalidInputError(f"{args.raster_layout}: malformed layout ({e})") from e
        raster, truth, annotations = gen_raster(width, height, regions, slide_id)
        save_raster(raster, args.out_dir / f"{slide_id}.png")
        save_mask_png(truth, args.out_dir / f"{slide_id}_truth.png")
        write_annotations(annotations, args.out_dir / f"{slide_id}.json")
        logger.info("Synthetic raster %s (%dx%d, %d annotations)", slide_id, width, height, len(annotations))
        return EXIT_OK
    spec = SynthSpec.from_json(args.spec) if args.spec else SynthSpec()
    if args.seed is not None:
        spec = SynthSpec.from_dict({**spec.to_dict(), "seed": args.seed})
    manifest = write_pools(gen_features(spec, cfg.tile.patch_size), args.out_dir)
    (args.out_dir / "synth_spec.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n",
                                                  encoding="utf-8")
    logger.info("Manifest written to %s", manifest)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_INPUT
    _configure_logging(args)
    try:
        cfg = _load(args)
        return args.handler(args, cfg)
    except NumericalError as e:
        logger.error("Numerical failure at step %d: %s", e.step, e)
        return EXIT_NUMERIC
    except (InvalidInputError, ConfigurationError, FileNotFoundError) as e:
        logger.error("%s", e)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
