#!/usr/bin/env python3
"""Render an anomaly heatmap for a toy slide.

This script paints a synthetic slide with one anomalous region, tiles it on
the overlapping heatmap grid, scores every patch by its kNN distance to the
normal patches, and writes a PNG showing the slide next to the heatmap
overlay. Scores are min-max scaled to [0, 1] before coloring.

Typical usage examples:
    python scripts/render_heatmap.py
    python scripts/render_heatmap.py --width 2040 --height 680 --colormap viridis_like
    python scripts/render_heatmap.py --anomaly 700 100 400 300 --output heat.png
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFont

ROOT = Path(__file__).resolve().parent.parent
SRC_DIR = ROOT / "src"
if SRC_DIR.exists():
    sys.path.insert(0, str(SRC_DIR))

from histoad import api
from histoad.config import PipelineConfig
from histoad.features.io import Label
from histoad.scoring.aggregate import ScoreTable
from histoad.scoring.heatmap import COLORMAPS, HeatmapRenderer
from histoad.synth.generator import LayoutRect, gen_raster

DEFAULT_OUTPUT = Path("heatmap_output.png")
LABEL_HEIGHT = 28


def parse_args() -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter
    )
    parser.add_argument("--width", type=int, default=1360, help="Slide width in pixels (default: 1360)")
    parser.add_argument("--height", type=int, default=680, help="Slide height in pixels (default: 680)")
    parser.add_argument(
        "--anomaly",
        type=int,
        nargs=4,
        metavar=("X", "Y", "WIDTH", "HEIGHT"),
        default=(500, 200, 360, 300),
        help="Anomalous rectangle (default: 500 200 360 300)"
    )
    parser.add_argument(
        "--colormap",
        default="blue_red",
        choices=sorted(COLORMAPS),
        help="Heatmap colormap (default: blue_red)"
    )
    parser.add_argument("--opacity", type=float, default=0.5, help="Overlay opacity (default: 0.5)")
    parser.add_argument(
        "--output",
        "-o",
        type=Path,
        default=DEFAULT_OUTPUT,
        help="Output PNG path (default: heatmap_output.png)"
    )
    return parser.parse_args()


def render(width: int, height: int, anomaly, colormap: str, opacity: float, output: Path) -> None:
    """Score the toy slide and save the side-by-side panel."""
    layout = [LayoutRect("tissue", 0, 0, width, height), LayoutRect("anomaly", *anomaly)]
    raster, _, regions = gen_raster(width, height, layout, slide_id="toy")
    cfg = PipelineConfig().override("knn", k=1).override("heatmap", colormap=colormap)

    _, coords = api.tile_slide(raster, cfg, heatmap=True)
    if not coords:
        raise SystemExit("The slide is smaller than one patch")
    views = api.embed_slide(raster, coords, cfg, n_views=1)
    labeled = api.label_features(views[0], regions, cfg.tile.patch_size)
    normal = labeled.where(lambda m: m.label is Label.NORMAL)
    if len(normal) == 0:
        raise SystemExit("Every patch touches the anomaly; shrink --anomaly")

    table = api.score_views(views, cfg, reference=normal)
    span = np.ptp(table.scores)
    scaled = (table.scores - table.scores.min()) / span if span > 0 else np.zeros(len(table))
    canvas = api.build_heatmap(ScoreTable(table.coords, scaled), width, height, "toy", cfg)
    overlay = HeatmapRenderer(colormap).render_overlay(canvas, raster, opacity)

    panel = Image.new("RGB", (2 * width, height + LABEL_HEIGHT), "white")
    panel.paste(Image.fromarray(raster.pixels), (0, LABEL_HEIGHT))
    panel.paste(overlay.convert("RGB"), (width, LABEL_HEIGHT))
    draw = ImageDraw.Draw(panel)
    font = ImageFont.load_default()
    draw.text((8, 6), "slide", font=font, fill="black")
    draw.text((width + 8, 6), f"heatmap ({colormap})", font=font, fill="black")

    output.parent.mkdir(parents=True, exist_ok=True)
    panel.save(output)
    print(f"Rendered {len(coords)} patches to {output}")
    print(f"  Slide score: {api.aggregate_scores(table, cfg)['toy']:.4f}")
    print(f"  Output size: {panel.width}x{panel.height} pixels")


def main() -> None:
    args = parse_args()
    render(args.width, args.height, args.anomaly, args.colormap, args.opacity, args.output)


if __name__ == "__main__":
    main()
