"""Slide preprocessing: rasters, tissue masks, tiling, stain normalization, views."""

from .augment import AugmentConfig, generate_views
from .embed import ColorStatsEmbedder, PatchEmbedder
from .raster import (
    SlideRaster,
    TissueMask,
    crop,
    load_mask_png,
    load_raster,
    raster_from_array,
    save_mask_png,
    save_raster,
)
from .stainnorm import LabStats, compute_stats, normalize, normalize_patch, pooled_target
from .tiler import (
    PatchCoord,
    TileSpec,
    TissueDetectConfig,
    background_fraction,
    detect_tissue,
    enumerate_patches,
    read_patch_csv,
    write_patch_csv,
)

__all__ = [
    "SlideRaster",
    "TissueMask",
    "crop",
    "load_raster",
    "raster_from_array",
    "save_raster",
    "save_mask_png",
    "load_mask_png",
    "LabStats",
    "compute_stats",
    "normalize",
    "normalize_patch",
    "pooled_target",
    "PatchCoord",
    "TileSpec",
    "TissueDetectConfig",
    "background_fraction",
    "detect_tissue",
    "enumerate_patches",
    "write_patch_csv",
    "read_patch_csv",
    "AugmentConfig",
    "generate_views",
    "PatchEmbedder",
    "ColorStatsEmbedder",
]
