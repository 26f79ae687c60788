"""Tissue detection and patch-grid enumeration.

A pixel is tissue when its HSV saturation exceeds ``s_min`` and its value is
below ``v_max``; one 3x3 majority vote then smooths the mask. Patches are laid
on a grid anchored at the top-left corner, partial patches at the right and
bottom edges are dropped, and a patch is kept when its background fraction is
at most ``max_background_fraction`` (inclusive).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Union

import numpy as np
from scipy import ndimage

from ..errors import InvalidInputError
from .raster import SlideRaster, TissueMask

logger = logging.getLogger(__name__)

DEFAULT_PATCH_SIZE = 340
HEATMAP_OVERLAP = 75


@dataclass(frozen=True)
class TissueDetectConfig:
    """Thresholds of the saturation/value tissue rule."""
    s_min: float = 0.05
    v_max: float = 0.98
    smoothing: bool = True


@dataclass(frozen=True)
class TileSpec:
    """Geometry of the patch grid.

    ``stride`` equals ``patch_size`` for training and evaluation; heatmaps use
    ``patch_size - 75`` (see :meth:`for_heatmap`).
    """
    patch_size: int = DEFAULT_PATCH_SIZE
    stride: int = DEFAULT_PATCH_SIZE
    max_background_fraction: float = 0.80

    def __post_init__(self):
        if self.patch_size < 1:
            raise InvalidInputError(f"patch_size must be >= 1, got {self.patch_size}")
        if not 1 <= self.stride <= self.patch_size:
            raise InvalidInputError(
                f"stride must lie in [1, patch_size={self.patch_size}], got {self.stride}"
            )
        if not 0.0 <= self.max_background_fraction <= 1.0:
            raise InvalidInputError(
                f"max_background_fraction must lie in [0, 1], got {self.max_background_fraction}"
            )

    @classmethod
    def for_heatmap(cls, patch_size: int = DEFAULT_PATCH_SIZE, overlap: int = HEATMAP_OVERLAP,
                    max_background_fraction: float = 0.80) -> "TileSpec":
        return cls(patch_size=patch_size, stride=patch_size - overlap,
                   max_background_fraction=max_background_fraction)

    @property
    def overlap(self) -> int:
        return self.patch_size - self.stride

    def grid_count(self, width: int, height: int) -> int:
        """Number of grid positions fully inside a ``width`` x ``height`` raster."""
        if width < self.patch_size or height < self.patch_size:
            return 0
        nx = (width - self.patch_size) // self.stride + 1
        ny = (height - self.patch_size) // self.stride + 1
        return nx * ny


@dataclass(frozen=True, order=True)
class PatchCoord:
    """Top-left pixel offset of a patch on a slide."""
    slide_id: str
    x: int
    y: int

    def center(self, patch_size: int):
        half = patch_size / 2.0
        return (self.x + half, self.y + half)


def rgb_to_saturation_value(pixels: np.ndarray):
    """HSV saturation and value in [0, 1] for an ``(H, W, 3)`` uint8 array."""
    rgb = pixels.astype(np.float64)
    cmax = rgb.max(axis=2)
    cmin = rgb.min(axis=2)
    value = cmax / 255.0
    with np.errstate(divide="ignore", invalid="ignore"):
        saturation = np.where(cmax > 0, (cmax - cmin) / np.where(cmax > 0, cmax, 1.0), 0.0)
    return saturation, value


def threshold_tissue(pixels: np.ndarray, config: TissueDetectConfig) -> np.ndarray:
    """Per-pixel tissue rule before smoothing."""
    saturation, value = rgb_to_saturation_value(pixels)
    return (saturation > config.s_min) & (value < config.v_max)


def majority_smooth(bits: np.ndarray) -> np.ndarray:
    """One pass of 3x3 majority vote; edges replicate the nearest pixel."""
    votes = ndimage.convolve(bits.astype(np.uint8), np.ones((3, 3), dtype=np.uint8),
                             mode="nearest")
    return votes >= 5


def detect_tissue(raster: SlideRaster, config: TissueDetectConfig = TissueDetectConfig()) -> TissueMask:
    """Compute the tissue mask of a raster.

    Raises:
        InvalidInputError: If the raster has zero area.
    """
    if raster.is_empty:
        raise InvalidInputError(f"Raster '{raster.id}' has zero area")
    bits = threshold_tissue(raster.pixels, config)
    if config.smoothing:
        bits = majority_smooth(bits)
    mask = TissueMask(bits=bits)
    logger.debug("Slide %s: tissue fraction %.4f", raster.id, mask.tissue_fraction)
    return mask


def _background_integral(mask: TissueMask) -> np.ndarray:
    """Summed-area table of background pixels with a zero first row/column."""
    background = (~mask.bits).astype(np.int64)
    table = np.zeros((mask.height + 1, mask.width + 1), dtype=np.int64)
    table[1:, 1:] = background.cumsum(axis=0).cumsum(axis=1)
    return table


def background_fraction(mask: TissueMask, coord: PatchCoord, patch_size: int) -> float:
    """Fraction of non-tissue pixels inside one patch window.

    Raises:
        InvalidInputError: If the window is not fully inside the mask.
    """
    x, y = coord.x, coord.y
    if x < 0 or y < 0 or x + patch_size > mask.width or y + patch_size > mask.height:
        raise InvalidInputError(
            f"Patch ({x}, {y}) of size {patch_size} exceeds mask {mask.width}x{mask.height}"
        )
    window = mask.bits[y:y + patch_size, x:x + patch_size]
    return float(np.count_nonzero(~window)) / float(patch_size * patch_size)


def enumerate_patches(mask: TissueMask, spec: TileSpec, slide_id: str = "") -> List[PatchCoord]:
    """List grid patches whose background fraction is within the limit.

    Returns coordinates sorted row-major (by ``y``, then ``x``).
    """
    size, stride = spec.patch_size, spec.stride
    if mask.width < size or mask.height < size:
        return []
    xs = np.arange(0, mask.width - size + 1, stride)
    ys = np.arange(0, mask.height - size + 1, stride)
    table = _background_integral(mask)
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    counts = (table[gy + size, gx + size] - table[gy, gx + size]
              - table[gy + size, gx] + table[gy, gx])
    # Compare integer counts so the inclusive boundary is exact.
    limit = spec.max_background_fraction * size * size
    keep = counts <= limit + 1e-9 * size * size
    coords = [PatchCoord(slide_id, int(x), int(y)) for y, x in zip(gy[keep], gx[keep])]
    logger.debug("Slide %s: %d of %d grid patches kept", slide_id, len(coords), gx.size)
    return coords


def coords_to_rows(coords: Iterable[PatchCoord]):
    """Rows for the ``slide_id,x,y`` patch CSV."""
    return [(c.slide_id, c.x, c.y) for c in coords]


PATCH_FIELDS = ("slide_id", "x", "y")


def write_patch_csv(coords: Iterable[PatchCoord], path: Union[str, Path]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(PATCH_FIELDS)
        writer.writerows(coords_to_rows(coords))


def read_patch_csv(path: Union[str, Path]) -> List[PatchCoord]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Patch list not found: {path}")
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != PATCH_FIELDS:
            raise InvalidInputError(f"{path}: expected header {','.join(PATCH_FIELDS)}")
        try:
            return [PatchCoord(row["slide_id"], int(row["x"]), int(row["y"])) for row in reader]
        except ValueError as e:
            raise InvalidInputError(f"{path}: {e}") from e
