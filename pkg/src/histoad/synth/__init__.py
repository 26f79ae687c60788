"""Deterministic synthetic data with known ground truth."""

from .generator import (
    LayoutRect,
    SynthPools,
    SynthSpec,
    gen_features,
    gen_raster,
    write_pools,
)

__all__ = ["SynthSpec", "SynthPools", "LayoutRect", "gen_features", "gen_raster", "write_pools"]
