"""Feature files, manifests and outlier-exposure sampling."""

from .io import (
    FeatureMatrix,
    Label,
    ManifestEntry,
    PatchMeta,
    TissueClass,
    load_entries,
    read_features,
    read_manifest,
    write_features,
    write_manifest,
)
from .oe import (
    OeFilterConfig,
    OeSamplerConfig,
    cosine_similarity,
    dedup_oe,
    make_rng_state,
    sample_batch,
)

__all__ = [
    "FeatureMatrix",
    "Label",
    "ManifestEntry",
    "PatchMeta",
    "TissueClass",
    "load_entries",
    "read_features",
    "read_manifest",
    "write_features",
    "write_manifest",
    "OeFilterConfig",
    "OeSamplerConfig",
    "cosine_similarity",
    "dedup_oe",
    "make_rng_state",
    "sample_batch",
]
