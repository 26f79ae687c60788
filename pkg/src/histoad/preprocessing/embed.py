"""Patch embedders for the raster demo path.

Real pipelines feed embeddings computed elsewhere. :class:`ColorStatsEmbedder`
is a small built-in descriptor (lαβ mean and std plus a coarse per-channel
histogram) so rasters can be scored end to end without a network.
"""

from __future__ import annotations

from typing import Protocol

import numpy as np

from .stainnorm import rgb_to_lab

# Bin edges per lαβ channel for the histogram part of the descriptor.
_HIST_RANGES = ((0.0, 4.5), (-0.4, 0.4), (-0.2, 0.2))


class PatchEmbedder(Protocol):
    """Anything that maps an RGB patch to a fixed-length vector."""

    dim: int

    def embed(self, patch: np.ndarray) -> np.ndarray:
        ...


class ColorStatsEmbedder:
    """lαβ moments plus ``bins`` histogram counts per channel."""

    def __init__(self, bins: int = 4):
        self.bins = bins
        self.dim = 6 + 3 * bins

    def embed(self, patch: np.ndarray) -> np.ndarray:
        lab = rgb_to_lab(np.asarray(patch).reshape(-1, 3))
        parts = [lab.mean(axis=0), lab.std(axis=0)]
        for channel, (lo, hi) in enumerate(_HIST_RANGES):
            hist, _ = np.histogram(np.clip(lab[:, channel], lo, hi), bins=self.bins, range=(lo, hi))
            parts.append(hist / max(1, lab.shape[0]))
        return np.concatenate(parts).astype(np.float32)
