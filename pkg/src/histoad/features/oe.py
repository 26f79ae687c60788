"""Outlier-exposure data handling: cosine deduplication and balanced sampling.

Batches hold ``normal_fraction`` normal rows (label 0) and the rest OE rows
(label 1), the OE part split ``near_fraction_of_oe`` near-tissue rows and the
remainder far-tissue rows. Rows are drawn uniformly with replacement.

Random state is a Philox counter-based generator state (``numpy``). Functions
take the state dict and return the advanced one, so callers thread it
explicitly and a state can be replayed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from ..errors import ConfigurationError, InvalidInputError, UndefinedSimilarityError
from .io import FeatureMatrix, Label, PatchMeta

logger = logging.getLogger(__name__)

# Unit-row dot products of (anti)parallel vectors land a few ulps either side of +-1.
PARALLEL_TOLERANCE = 1e-12

RngState = Dict


@dataclass(frozen=True)
class OeFilterConfig:
    """OE rows more similar than ``cosine_threshold`` to a normal row are dropped."""
    cosine_threshold: float = 0.9
    chunk_rows: int = 4096

    def __post_init__(self):
        if not -1.0 <= self.cosine_threshold <= 1.0:
            raise ConfigurationError(
                f"cosine_threshold must lie in [-1, 1], got {self.cosine_threshold}"
            )


@dataclass(frozen=True)
class OeSamplerConfig:
    """Composition of outlier-exposure training batches."""
    batch_size: int = 32
    normal_fraction: float = 0.5
    near_fraction_of_oe: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 4 or self.batch_size % 4:
            raise ConfigurationError(f"batch_size must be a positive multiple of 4, got {self.batch_size}")
        for name in ("normal_fraction", "near_fraction_of_oe"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1], got {value}")

    def composition(self) -> Tuple[int, int, int]:
        """``(n_normal, n_near, n_far)`` row counts of one batch."""
        n_normal = int(round(self.batch_size * self.normal_fraction))
        n_oe = self.batch_size - n_normal
        n_near = int(round(n_oe * self.near_fraction_of_oe))
        return n_normal, n_near, n_oe - n_near


def make_rng_state(seed: int) -> RngState:
    """Initial Philox state for a 64-bit seed."""
    return np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF).state


def generator_from_state(state: RngState) -> np.random.Generator:
    bitgen = np.random.Philox()
    bitgen.state = state
    return np.random.Generator(bitgen)


def spawn_seeds(seed: int, n: int):
    """Independent child seeds derived from one seed (SeedSequence splitting)."""
    children = np.random.SeedSequence(int(seed)).spawn(n)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine of the angle between two vectors.

    Raises:
        InvalidInputError: If the dimensions differ.
        UndefinedSimilarityError: If either vector is all zeros.
    """
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise InvalidInputError(f"Dimension mismatch: {u.size} vs {v.size}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise UndefinedSimilarityError("Cosine similarity is undefined for a zero vector")
    return float(_snap_cosine(np.dot(u, v) / (nu * nv)))


def _snap_cosine(sim):
    """Clamp to [-1, 1]; values within PARALLEL_TOLERANCE of +-1 become exactly +-1."""
    sim = np.clip(sim, -1.0, 1.0)
    return np.where(np.abs(sim) >= 1.0 - PARALLEL_TOLERANCE, np.sign(sim), sim)


def _unit_rows(rows: np.ndarray, what: str) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    norms = np.linalg.norm(rows, axis=1)
    if np.any(norms == 0.0):
        raise UndefinedSimilarityError(f"{what} contains a zero vector")
    return rows / norms[:, None]


def max_cosine_to(oe_rows: np.ndarray, normal_rows: np.ndarray, chunk_rows: int = 4096) -> np.ndarray:
    """For every OE row, its largest cosine similarity to any normal row."""
    oe_unit = _unit_rows(oe_rows, "OE data")
    normal_unit = _unit_rows(normal_rows, "Normal data")
    best = np.full(oe_unit.shape[0], -np.inf)
    for start in range(0, normal_unit.shape[0], chunk_rows):
        block = oe_unit @ normal_unit[start:start + chunk_rows].T
        np.maximum(best, block.max(axis=1), out=best)
    return _snap_cosine(best)


def dedup_oe(oe: FeatureMatrix, normal: FeatureMatrix, cfg: OeFilterConfig = OeFilterConfig()) -> FeatureMatrix:
    """Drop OE rows whose cosine similarity to some normal row exceeds the threshold.

    A similarity exactly equal to the threshold is kept, so at threshold 1.0
    exact duplicates and positive multiples of a normal row survive. Order is
    preserved.
    Exact all-pairs comparison, O(N*M*D).
    """
    if oe.dim != normal.dim:
        raise InvalidInputError(f"Dimension mismatch: OE D={oe.dim}, normal D={normal.dim}")
    if len(oe) == 0 or len(normal) == 0:
        return oe.subset(range(len(oe)))
    best = max_cosine_to(oe.rows, normal.rows, cfg.chunk_rows)
    keep = np.flatnonzero(best <= cfg.cosine_threshold)
    logger.info("OE dedup: kept %d of %d rows (threshold %.3f)", keep.size, len(oe), cfg.cosine_threshold)
    return oe.subset(keep)


def draw_indices(pool_sizes: Tuple[int, int, int], cfg: OeSamplerConfig,
                 rng_state: RngState) -> Tuple[Tuple[np.ndarray, np.ndarray, np.ndarray], RngState]:
    """Draw row indices into the normal, near and far pools for one batch."""
    counts = cfg.composition()
    for name, size, count in zip(("normal", "near-OE", "far-OE"), pool_sizes, counts):
        if count > 0 and size == 0:
            raise ConfigurationError(f"The {name} pool is empty but {count} rows per batch are required")
    gen = generator_from_state(rng_state)
    picks = tuple(
        gen.integers(0, size, size=count) if count > 0 else np.zeros(0, dtype=np.int64)
        for size, count in zip(pool_sizes, counts)
    )
    return picks, gen.bit_generator.state


def sample_batch(normal: FeatureMatrix, near: FeatureMatrix, far: FeatureMatrix,
                 cfg: OeSamplerConfig, rng_state: RngState) -> Tuple[FeatureMatrix, np.ndarray, RngState]:
    """Sample one balanced outlier-exposure batch.

    Returns:
        ``(batch, labels, new_rng_state)``; ``labels`` is 0 for normal rows and
        1 for OE rows, matching the ``label`` field of ``batch.meta``.
    """
    (i_norm, i_near, i_far), new_state = draw_indices((len(normal), len(near), len(far)), cfg, rng_state)
    parts = []
    for pool, idx, label in ((normal, i_norm, Label.NORMAL), (near, i_near, Label.ANOMALOUS),
                             (far, i_far, Label.ANOMALOUS)):
        if idx.size == 0:
            continue
        meta = [PatchMeta(m.slide_id, m.x, m.y, m.tissue_class, label)
                for m in (pool.meta[i] for i in idx.tolist())]
        parts.append(FeatureMatrix(rows=pool.rows[idx], meta=meta))
    batch = FeatureMatrix.concat(parts)
    labels = np.concatenate([np.zeros(i_norm.size), np.ones(i_near.size + i_far.size)]).astype(np.int64)
    return batch, labels, new_state
