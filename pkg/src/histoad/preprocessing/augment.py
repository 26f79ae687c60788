"""Augmented patch views for test-time augmentation on rasters.

Views follow the training augmentation recipe: a random resized crop covering
10% to 100% of the patch area with aspect ratio in [3/4, 4/3], colour jitter,
and grayscale conversion with probability 0.2. All randomness comes from the
``numpy`` generator passed in, so views are reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from PIL import Image, ImageEnhance

from ..errors import InvalidInputError


@dataclass(frozen=True)
class AugmentConfig:
    """Parameters of the view generator."""
    crop_scale: Tuple[float, float] = (0.10, 1.00)
    crop_ratio: Tuple[float, float] = (3.0 / 4.0, 4.0 / 3.0)
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.4
    grayscale_p: float = 0.2
    include_identity: bool = True


def random_resized_crop(image: Image.Image, rng: np.random.Generator,
                        scale=(0.10, 1.00), ratio=(3.0 / 4.0, 4.0 / 3.0)) -> Image.Image:
    """Crop a random area/aspect window and resize it back to the input size."""
    width, height = image.size
    area = width * height
    log_ratio = (math.log(ratio[0]), math.log(ratio[1]))
    for _ in range(10):
        target_area = area * rng.uniform(scale[0], scale[1])
        aspect = math.exp(rng.uniform(*log_ratio))
        w = int(round(math.sqrt(target_area * aspect)))
        h = int(round(math.sqrt(target_area / aspect)))
        if 0 < w <= width and 0 < h <= height:
            left = int(rng.integers(0, width - w + 1))
            top = int(rng.integers(0, height - h + 1))
            box = (left, top, left + w, top + h)
            return image.crop(box).resize((width, height), Image.BILINEAR)
    return image.copy()


def color_jitter(image: Image.Image, rng: np.random.Generator,
                 brightness=0.4, contrast=0.4, saturation=0.4) -> Image.Image:
    """Scale brightness, contrast and saturation by factors in [1-j, 1+j]."""
    enhancers = [
        (ImageEnhance.Brightness, brightness),
        (ImageEnhance.Contrast, contrast),
        (ImageEnhance.Color, saturation),
    ]
    order = rng.permutation(len(enhancers))
    out = image
    for idx in order:
        enhancer, jitter = enhancers[int(idx)]
        if jitter > 0:
            factor = rng.uniform(max(0.0, 1.0 - jitter), 1.0 + jitter)
            out = enhancer(out).enhance(factor)
    return out


def random_grayscale(image: Image.Image, rng: np.random.Generator, p: float = 0.2) -> Image.Image:
    if rng.random() < p:
        return image.convert("L").convert("RGB")
    return image


def augment(patch: np.ndarray, rng: np.random.Generator,
            config: AugmentConfig = AugmentConfig()) -> np.ndarray:
    """Return one augmented view of a ``(H, W, 3)`` uint8 patch."""
    image = Image.fromarray(np.ascontiguousarray(patch))
    image = random_resized_crop(image, rng, config.crop_scale, config.crop_ratio)
    image = color_jitter(image, rng, config.brightness, config.contrast, config.saturation)
    image = random_grayscale(image, rng, config.grayscale_p)
    return np.asarray(image, dtype=np.uint8)


def generate_views(patch: np.ndarray, n: int, rng: np.random.Generator,
                   config: AugmentConfig = AugmentConfig()) -> List[np.ndarray]:
    """Produce ``n`` views of a patch; the first is the patch itself when
    ``config.include_identity`` is set."""
    if n < 1:
        raise InvalidInputError(f"Number of views must be >= 1, got {n}")
    views = []
    for i in range(n):
        if i == 0 and config.include_identity:
            views.append(np.array(patch, dtype=np.uint8, copy=True))
        else:
            views.append(augment(patch, rng, config))
    return views
