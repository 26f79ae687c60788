"""Slide rasters and tissue masks.

Plain RGB rasters stand in for whole slide images. Decoding goes through
Pillow, which reads PNG and binary PPM (P6) alike.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image

from ..errors import InvalidInputError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass(frozen=True)
class SlideRaster:
    """An 8-bit RGB raster of one slide.

    Attributes:
        id: Slide identifier, carried into every patch coordinate.
        pixels: ``uint8`` array of shape ``(height, width, 3)``, row-major.
        mpp: Microns per pixel. Informational only (about 0.5 at 20x).
    """
    id: str
    pixels: np.ndarray
    mpp: float = 0.5

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 3 or px.shape[2] != 3:
            raise InvalidInputError(
                f"Raster '{self.id}' must have shape (H, W, 3), got {px.shape}"
            )
        if px.dtype != np.uint8:
            raise InvalidInputError(f"Raster '{self.id}' must be uint8, got {px.dtype}")

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def is_empty(self) -> bool:
        return self.width == 0 or self.height == 0


@dataclass(frozen=True)
class TissueMask:
    """One boolean per raster pixel, ``True`` where tissue was detected."""
    bits: np.ndarray

    def __post_init__(self):
        if self.bits.ndim != 2 or self.bits.dtype != np.bool_:
            raise InvalidInputError(
                f"Tissue mask must be a 2-D bool array, got {self.bits.dtype} {self.bits.shape}"
            )

    @property
    def width(self) -> int:
        return int(self.bits.shape[1])

    @property
    def height(self) -> int:
        return int(self.bits.shape[0])

    @property
    def tissue_fraction(self) -> float:
        if self.bits.size == 0:
            return 0.0
        return float(self.bits.mean())


def raster_from_array(slide_id: str, pixels: np.ndarray, mpp: float = 0.5) -> SlideRaster:
    """Wrap an ``(H, W, 3)`` array (any integer dtype in 0..255) as a raster."""
    arr = np.asarray(pixels)
    if arr.dtype != np.uint8:
        if arr.size and (arr.min() < 0 or arr.max() > 255):
            raise InvalidInputError(f"Pixel values of '{slide_id}' fall outside 0..255")
        arr = arr.astype(np.uint8)
    return SlideRaster(id=slide_id, pixels=np.ascontiguousarray(arr), mpp=mpp)


def load_raster(path: PathLike, slide_id: str = None, mpp: float = 0.5) -> SlideRaster:
    """Read a PNG or P6 PPM file into a :class:`SlideRaster`.

    Args:
        path: Image file path.
        slide_id: Identifier to use. Defaults to the file stem.
        mpp: Microns per pixel recorded on the raster.

    Raises:
        FileNotFoundError: If ``path`` does not exist.
        InvalidInputError: If Pillow cannot decode the file.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Slide raster not found: {path}")
    try:
        with Image.open(path) as img:
            pixels = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (OSError, SyntaxError) as e:
        raise InvalidInputError(f"Could not decode raster {path}: {e}") from e
    logger.debug("Loaded raster %s (%dx%d)", path, pixels.shape[1], pixels.shape[0])
    return SlideRaster(id=slide_id or path.stem, pixels=pixels.copy(), mpp=mpp)


def save_raster(raster: SlideRaster, path: PathLike) -> None:
    """Write a raster as PNG, or as P6 PPM when the suffix is ``.ppm``."""
    path = Path(path)
    fmt = "PPM" if path.suffix.lower() == ".ppm" else "PNG"
    Image.fromarray(raster.pixels).save(path, format=fmt)


def save_mask_png(mask: TissueMask, path: PathLike) -> None:
    """Write a mask as an 8-bit PNG: 0 = background, 255 = tissue."""
    Image.fromarray(mask.bits.astype(np.uint8) * 255).save(Path(path), format="PNG")


def load_mask_png(path: PathLike) -> TissueMask:
    """Read a mask PNG written by :func:`save_mask_png`."""
    with Image.open(Path(path)) as img:
        arr = np.asarray(img.convert("L"))
    return TissueMask(bits=arr > 127)


def crop(raster: SlideRaster, x: int, y: int, size: int) -> np.ndarray:
    """Return the ``size``x``size`` patch with top-left corner ``(x, y)``."""
    if x < 0 or y < 0 or x + size > raster.width or y + size > raster.height:
        raise InvalidInputError(
            f"Patch ({x}, {y}) of size {size} exceeds raster '{raster.id}' "
            f"({raster.width}x{raster.height})"
        )
    return raster.pixels[y:y + size, x:x + size]
