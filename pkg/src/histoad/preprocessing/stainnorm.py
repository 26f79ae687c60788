"""Reinhard stain normalization in the lαβ colour space.

Pixels go RGB -> LMS (Reinhard's matrix) -> log10 (floored at 1e-6) -> lαβ
(orthogonal opponent transform). Normalization matches per-channel mean and
standard deviation to a target, then maps back to RGB clamped to [0, 255].

Source statistics are computed per patch. Computing them once per slide and
reusing them for every patch is the alternative; pass the slide's stats as
``source`` to :func:`normalize` to get that behaviour.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..errors import InvalidInputError
from .raster import TissueMask

logger = logging.getLogger(__name__)

STD_EPSILON = 1e-6
LOG_FLOOR = 1e-6

RGB_TO_LMS = np.array([
    [0.3811, 0.5783, 0.0402],
    [0.1967, 0.7244, 0.0782],
    [0.0241, 0.1288, 0.8444],
])
LMS_TO_RGB = np.linalg.inv(RGB_TO_LMS)

LOG_LMS_TO_LAB = np.diag([1.0 / np.sqrt(3.0), 1.0 / np.sqrt(6.0), 1.0 / np.sqrt(2.0)]) @ np.array([
    [1.0, 1.0, 1.0],
    [1.0, 1.0, -2.0],
    [1.0, -1.0, 0.0],
])
LAB_TO_LOG_LMS = np.linalg.inv(LOG_LMS_TO_LAB)


@dataclass(frozen=True)
class LabStats:
    """Per-channel mean and population std in lαβ space.

    Attributes:
        mean: ``(l, α, β)`` means.
        std: ``(l, α, β)`` standard deviations, each > 0.
        clamped: True when at least one std was raised to the epsilon floor.
    """
    mean: tuple
    std: tuple
    clamped: bool = False

    def __post_init__(self):
        if len(self.mean) != 3 or len(self.std) != 3:
            raise InvalidInputError("LabStats needs 3 means and 3 stds")
        if any(not s > 0 for s in self.std):
            raise InvalidInputError(f"LabStats std components must be > 0, got {self.std}")

    @property
    def mean_array(self) -> np.ndarray:
        return np.asarray(self.mean, dtype=np.float64)

    @property
    def std_array(self) -> np.ndarray:
        return np.asarray(self.std, dtype=np.float64)

    def to_dict(self) -> dict:
        return {"mean": [_sig9(v) for v in self.mean], "std": [_sig9(v) for v in self.std]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "LabStats":
        try:
            return cls(mean=tuple(float(v) for v in data["mean"]),
                       std=tuple(float(v) for v in data["std"]))
        except (KeyError, TypeError) as e:
            raise InvalidInputError(f"Malformed LabStats: {data!r}") from e

    @classmethod
    def from_json(cls, text: str) -> "LabStats":
        return cls.from_dict(json.loads(text))


def _sig9(value: float) -> float:
    return float(f"{value:.9g}")


def rgb_to_lab(pixels: np.ndarray) -> np.ndarray:
    """Convert ``(..., 3)`` RGB values in 0..255 to lαβ (float64)."""
    rgb = np.asarray(pixels, dtype=np.float64)
    lms = rgb @ RGB_TO_LMS.T
    log_lms = np.log10(np.maximum(lms, LOG_FLOOR))
    return log_lms @ LOG_LMS_TO_LAB.T


def lab_to_rgb_float(lab: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rgb_to_lab` without clamping or rounding."""
    log_lms = np.asarray(lab, dtype=np.float64) @ LAB_TO_LOG_LMS.T
    lms = np.power(10.0, log_lms)
    return lms @ LMS_TO_RGB.T


def lab_to_rgb(lab: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rgb_to_lab`, rounded and clamped to uint8."""
    return np.clip(np.rint(lab_to_rgb_float(lab)), 0, 255).astype(np.uint8)


def compute_stats(pixels: np.ndarray, mask: Optional[TissueMask] = None) -> LabStats:
    """Compute lαβ statistics over all pixels, or over tissue pixels of ``mask``.

    A channel with zero variance gets std ``1e-6`` and ``clamped=True``.

    Raises:
        InvalidInputError: If fewer than two pixels are selected or the mask
            shape does not match.
    """
    arr = np.asarray(pixels)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InvalidInputError(f"Expected (H, W, 3) pixels, got {arr.shape}")
    if mask is not None:
        if mask.bits.shape != arr.shape[:2]:
            raise InvalidInputError(
                f"Mask shape {mask.bits.shape} does not match pixels {arr.shape[:2]}"
            )
        selected = arr[mask.bits]
    else:
        selected = arr.reshape(-1, 3)
    if selected.shape[0] < 2:
        raise InvalidInputError(f"Need at least 2 pixels for stain stats, got {selected.shape[0]}")
    return stats_from_lab(rgb_to_lab(selected))


def stats_from_lab(lab: np.ndarray) -> LabStats:
    """Statistics of already converted ``(N, 3)`` lαβ values."""
    lab = np.asarray(lab, dtype=np.float64).reshape(-1, 3)
    mean = lab.mean(axis=0)
    std = lab.std(axis=0)
    clamped = bool(np.any(std < STD_EPSILON))
    if clamped:
        logger.warning("Constant colour channel in stain stats; std clamped to %g", STD_EPSILON)
        std = np.maximum(std, STD_EPSILON)
    return LabStats(mean=tuple(float(v) for v in mean), std=tuple(float(v) for v in std),
                    clamped=clamped)


def normalize_lab(lab: np.ndarray, source: LabStats, target: LabStats) -> np.ndarray:
    """Apply the mean/std transfer to lαβ values (no clamping)."""
    scale = target.std_array / source.std_array
    return (lab - source.mean_array) * scale + target.mean_array


def normalize(patch: np.ndarray, source: LabStats, target: LabStats) -> np.ndarray:
    """Normalize an RGB patch from ``source`` to ``target`` statistics.

    Returns a ``uint8`` array of the same shape.
    """
    lab = rgb_to_lab(patch)
    return lab_to_rgb(normalize_lab(lab, source, target))


def normalize_patch(patch: np.ndarray, target: LabStats,
                    mask: Optional[TissueMask] = None) -> np.ndarray:
    """Normalize with source stats computed from the patch itself."""
    return normalize(patch, compute_stats(patch, mask), target)


def pooled_target(stats: Sequence[LabStats]) -> LabStats:
    """Average per-slide statistics into one normalization target."""
    if not stats:
        raise InvalidInputError("Cannot pool an empty list of stain statistics")
    means = np.mean([s.mean_array for s in stats], axis=0)
    stds = np.mean([s.std_array for s in stats], axis=0)
    return LabStats(mean=tuple(float(v) for v in means), std=tuple(float(v) for v in stds))
