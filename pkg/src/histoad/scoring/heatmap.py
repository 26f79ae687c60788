"""Heatmaps from overlapping patch scores.

Every patch adds its score to each pixel it covers; a pixel's value is the
mean over the patches covering it. Canvases from different workers can be
merged by summation because sums and counts are associative.

Rendering maps values in [0, 1] through a piecewise-linear colormap; pixels
no patch covers stay fully transparent.

Example:
    >>> canvas = HeatmapCanvas(945, 340)
    >>> for x, s in zip((0, 265, 530), (0.1, 0.9, 0.1)):
    ...     canvas.accumulate(PatchCoord("s1", x, 0), s, 340)
    >>> HeatmapRenderer().render_to_file(canvas, "heatmap.png")
"""

from __future__ import annotations

import base64
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Sequence, Tuple, Union

import numpy as np
from PIL import Image

from ..errors import ConfigurationError, InvalidInputError
from ..features.io import FeatureMatrix, PatchMeta, write_features
from ..preprocessing.raster import SlideRaster
from ..preprocessing.tiler import HEATMAP_OVERLAP, PatchCoord

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
Stop = Tuple[float, Tuple[int, int, int]]


@dataclass(frozen=True)
class Colormap:
    """Piecewise-linear RGB colormap over [0, 1]."""
    name: str
    stops: Tuple[Stop, ...]

    def __post_init__(self):
        positions = [p for p, _ in self.stops]
        if len(positions) < 2 or positions[0] != 0.0 or positions[-1] != 1.0:
            raise ConfigurationError(f"Colormap '{self.name}' must have stops at 0 and 1")
        if any(b <= a for a, b in zip(positions, positions[1:])):
            raise ConfigurationError(f"Colormap '{self.name}' stops must be increasing")

    def map_float(self, values: np.ndarray) -> np.ndarray:
        """Unrounded RGB of ``values`` (clipped to [0, 1]), shape ``values.shape + (3,)``."""
        v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
        positions = np.array([p for p, _ in self.stops])
        colors = np.array([c for _, c in self.stops], dtype=np.float64)
        return np.stack([np.interp(v, positions, colors[:, ch]) for ch in range(3)], axis=-1)

    def map(self, values: np.ndarray) -> np.ndarray:
        return np.rint(self.map_float(values)).astype(np.uint8)


COLORMAPS: Dict[str, Colormap] = {
    "blue_red": Colormap("blue_red", ((0.0, (0, 0, 255)), (1.0, (255, 0, 0)))),
    "viridis_like": Colormap("viridis_like", (
        (0.0, (68, 1, 84)),
        (0.25, (59, 82, 139)),
        (0.5, (33, 145, 140)),
        (0.75, (94, 201, 98)),
        (1.0, (253, 231, 37)),
    )),
}


def get_colormap(name: str) -> Colormap:
    try:
        return COLORMAPS[name]
    except KeyError:
        raise ConfigurationError(
            f"Unknown colormap '{name}'. Choose from: {', '.join(sorted(COLORMAPS))}"
        ) from None


@dataclass(frozen=True)
class HeatmapConfig:
    overlap: int = HEATMAP_OVERLAP
    colormap: str = "blue_red"
    alpha: int = 255
    overlay_opacity: float = 0.5

    def __post_init__(self):
        get_colormap(self.colormap)
        if self.overlap < 0:
            raise ConfigurationError(f"overlap must be >= 0, got {self.overlap}")
        if not 0 <= self.alpha <= 255:
            raise ConfigurationError(f"alpha must lie in [0, 255], got {self.alpha}")
        if not 0.0 <= self.overlay_opacity <= 1.0:
            raise ConfigurationError(f"overlay_opacity must lie in [0, 1], got {self.overlay_opacity}")


@dataclass
class HeatmapCanvas:
    """Per-pixel score sums and covering-patch counts."""
    width: int
    height: int
    score_sum: np.ndarray = field(default=None, repr=False)
    weight_count: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise InvalidInputError(f"Canvas must be at least 1x1, got {self.width}x{self.height}")
        if self.score_sum is None:
            self.score_sum = np.zeros((self.height, self.width), dtype=np.float64)
        if self.weight_count is None:
            self.weight_count = np.zeros((self.height, self.width), dtype=np.int64)

    def accumulate(self, coord: PatchCoord, score: float, patch_size: int) -> "HeatmapCanvas":
        """Add ``score`` over the patch window, in place."""
        x, y = coord.x, coord.y
        if x < 0 or y < 0 or x + patch_size > self.width or y + patch_size > self.height:
            raise InvalidInputError(
                f"Patch at ({x}, {y}) size {patch_size} lies outside the {self.width}x{self.height} canvas"
            )
        self.score_sum[y:y + patch_size, x:x + patch_size] += score
        self.weight_count[y:y + patch_size, x:x + patch_size] += 1
        return self

    def merge(self, other: "HeatmapCanvas") -> "HeatmapCanvas":
        if (self.width, self.height) != (other.width, other.height):
            raise InvalidInputError("Cannot merge canvases of different sizes")
        return HeatmapCanvas(self.width, self.height, self.score_sum + other.score_sum,
                             self.weight_count + other.weight_count)

    @property
    def covered(self) -> np.ndarray:
        return self.weight_count > 0

    def values(self) -> np.ndarray:
        """Averaged grid; NaN where no patch contributed."""
        out = np.full(self.score_sum.shape, np.nan)
        mask = self.covered
        out[mask] = self.score_sum[mask] / self.weight_count[mask]
        return out


def heatmap_accumulate(canvas: HeatmapCanvas, coord: PatchCoord, score: float,
                       patch_size: int) -> HeatmapCanvas:
    return canvas.accumulate(coord, score, patch_size)


def canvas_from_scores(width: int, height: int, coords: Sequence[PatchCoord], scores: Sequence[float],
                       patch_size: int) -> HeatmapCanvas:
    canvas = HeatmapCanvas(width, height)
    for coord, score in zip(coords, scores):
        canvas.accumulate(coord, float(score), patch_size)
    return canvas


def heatmap_render(canvas: HeatmapCanvas, colormap: Union[str, Colormap] = "blue_red",
                   alpha: int = 255) -> Tuple[Image.Image, np.ndarray]:
    """RGBA image of the averaged grid plus the grid itself."""
    cmap = get_colormap(colormap) if isinstance(colormap, str) else colormap
    grid = canvas.values()
    covered = canvas.covered
    rgba = np.zeros((canvas.height, canvas.width, 4), dtype=np.uint8)
    rgba[covered, :3] = cmap.map(grid[covered])
    rgba[covered, 3] = alpha
    return Image.fromarray(rgba), grid


def write_grid(canvas: HeatmapCanvas, path: PathLike, slide_id: str = "") -> None:
    """Store the averaged grid as a D=1 feature file, one row per pixel (row-major)."""
    grid = canvas.values()
    ys, xs = np.indices(grid.shape)
    meta = [PatchMeta(slide_id, int(x), int(y)) for y, x in zip(ys.ravel(), xs.ravel())]
    write_features(FeatureMatrix(rows=grid.reshape(-1, 1).astype(np.float32), meta=meta), path)


class HeatmapRenderer:
    """Renders heatmap canvases as images.

    Examples:
        >>> renderer = HeatmapRenderer(colormap="viridis_like")
        >>> renderer.render_to_file(canvas, "heatmap.png")
        >>> b64 = renderer.render_to_base64(canvas)
        >>> renderer.render_overlay(canvas, raster).save("overlay.png")
    """

    def __init__(self, colormap: str = "blue_red", alpha: int = 255):
        self.colormap = get_colormap(colormap)
        self.alpha = alpha

    @classmethod
    def from_config(cls, cfg: HeatmapConfig) -> "HeatmapRenderer":
        return cls(cfg.colormap, cfg.alpha)

    def render(self, canvas: HeatmapCanvas) -> Image.Image:
        image, _ = heatmap_render(canvas, self.colormap, self.alpha)
        return image

    def render_to_file(self, canvas: HeatmapCanvas, output_path: PathLike) -> None:
        """Save as an image; format follows the file extension."""
        self.render(canvas).save(output_path)

    def render_to_bytes(self, canvas: HeatmapCanvas, format: str = "PNG") -> bytes:
        buffer = io.BytesIO()
        self.render(canvas).save(buffer, format=format)
        return buffer.getvalue()

    def render_to_base64(self, canvas: HeatmapCanvas, format: str = "PNG") -> str:
        """Base64 image data without a data URI prefix."""
        return base64.b64encode(self.render_to_bytes(canvas, format)).decode("ascii")

    def render_overlay(self, canvas: HeatmapCanvas, raster: SlideRaster,
                       opacity: float = 0.5) -> Image.Image:
        """Blend the heatmap onto the slide; uncovered pixels show the slide unchanged."""
        if (raster.width, raster.height) != (canvas.width, canvas.height):
            raise InvalidInputError("Raster and canvas sizes differ")
        heat = np.asarray(self.render(canvas)).astype(np.float64)
        base = raster.pixels.astype(np.float64)
        weight = (heat[..., 3:4] / 255.0) * opacity
        blended = base * (1.0 - weight) + heat[..., :3] * weight
        return Image.fromarray(np.rint(blended).astype(np.uint8))
