"""Synthetic feature pools and toy slide rasters with known ground truth.

Feature pools are Gaussian with a shared diagonal covariance:

* normal:     N(mu, sigma^2)
* anomalous:  N(mu + delta, sigma^2)
* near OE:    N(mu + delta / 2, sigma^2)
* far OE:     N(mu_far, sigma^2), ``|mu_far - mu| = far_distance``

Each pool draws from its own Philox stream; the four stream seeds are split
from ``SynthSpec.seed`` with ``numpy.random.SeedSequence.spawn`` in the order
normal, anomalous, near, far.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import ConfigurationError, InvalidInputError
from ..evaluation.annotations import AnnotationKind, Region
from ..features.io import (
    FeatureMatrix,
    Label,
    ManifestEntry,
    PatchMeta,
    TissueClass,
    write_features,
    write_manifest,
)
from ..features.oe import generator_from_state, make_rng_state, spawn_seeds
from ..preprocessing.raster import SlideRaster, TissueMask
from ..preprocessing.tiler import DEFAULT_PATCH_SIZE

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

BACKGROUND_RGB = (255, 255, 255)
TISSUE_RGB = (200, 80, 120)
ANOMALY_RGB = (120, 40, 160)
ARTIFACT_RGB = (40, 110, 60)


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic feature generator.

    ``mean`` and ``sigma`` may be scalars (broadcast over all ``dim``
    coordinates) or length-``dim`` sequences. The anomaly shift is ``shift``
    when given, otherwise ``shift_norm`` along the all-ones direction.
    ``groups`` tags anomalous slides round-robin with diagnosis groups.
    """
    dim: int = 16
    n_normal: int = 2000
    n_anomalous: int = 200
    n_near_oe: int = 1000
    n_far_oe: int = 1000
    mean: Union[float, Tuple[float, ...]] = 0.0
    sigma: Union[float, Tuple[float, ...]] = 1.0
    shift: Optional[Tuple[float, ...]] = None
    shift_norm: float = 4.0
    far_distance: float = 40.0
    patches_per_slide: int = 50
    groups: Tuple[str, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigurationError(f"dim must be positive, got {self.dim}")
        for name in ("n_normal", "n_anomalous", "n_near_oe", "n_far_oe", "patches_per_slide"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if np.any(self.sigma_vector <= 0):
            raise ConfigurationError("sigma must be positive in every coordinate")
        self._vector(self.mean, "mean")
        if self.shift is not None and len(self.shift) != self.dim:
            raise ConfigurationError(f"shift has {len(self.shift)} entries for dim {self.dim}")
        object.__setattr__(self, "groups", tuple(self.groups))

    def _vector(self, value, name: str) -> np.ndarray:
        arr = np.asarray(value, dtype=np.float64)
        if arr.ndim == 0:
            return np.full(self.dim, float(arr))
        if arr.shape != (self.dim,):
            raise ConfigurationError(f"{name} has {arr.size} entries for dim {self.dim}")
        return arr

    @property
    def mean_vector(self) -> np.ndarray:
        return self._vector(self.mean, "mean")

    @property
    def sigma_vector(self) -> np.ndarray:
        return self._vector(self.sigma, "sigma")

    @property
    def shift_vector(self) -> np.ndarray:
        if self.shift is not None:
            return np.asarray(self.shift, dtype=np.float64)
        return np.full(self.dim, self.shift_norm / np.sqrt(self.dim))

    @property
    def far_mean(self) -> np.ndarray:
        direction = np.where(np.arange(self.dim) % 2 == 0, 1.0, -1.0)
        if self.dim == 1:
            direction = np.array([-1.0])
        return self.mean_vector + self.far_distance * direction / np.linalg.norm(direction)

    def to_dict(self) -> dict:
        data = asdict(self)
        for key in ("mean", "sigma", "shift", "groups"):
            if isinstance(data[key], tuple):
                data[key] = list(data[key])
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "SynthSpec":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationError(f"Unknown synth spec keys: {', '.join(unknown)}")
        kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path: PathLike) -> "SynthSpec":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Synth spec not found: {path}")
        try:
            return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"{path}: invalid JSON ({e})") from e


@dataclass
class SynthPools:
    normal: FeatureMatrix
    anomalous: FeatureMatrix
    near: FeatureMatrix
    far: FeatureMatrix
    groups: Dict[str, str] = field(default_factory=dict)

    def items(self):
        return (("normal", self.normal), ("anomalous", self.anomalous),
                ("near", self.near), ("far", self.far))


def _gaussian(n: int, mean: np.ndarray, sigma: np.ndarray, seed: int) -> np.ndarray:
    gen = generator_from_state(make_rng_state(seed))
    return mean + sigma * gen.standard_normal((n, mean.size))


def _pool(rows: np.ndarray, prefix: str, per_slide: int, patch_size: int,
          tissue_class: TissueClass, label: Label) -> FeatureMatrix:
    meta = [PatchMeta(f"{prefix}-{i // per_slide:04d}", (i % per_slide) * patch_size, 0, tissue_class, label)
            for i in range(rows.shape[0])]
    return FeatureMatrix(rows=rows.astype(np.float32), meta=meta)


def gen_features(spec: SynthSpec, patch_size: int = DEFAULT_PATCH_SIZE) -> SynthPools:
    """Draw the four pools of ``spec``.

    Patches are grouped into slides of ``patches_per_slide`` rows, laid out
    left to right. Anomalous rows carry the ``anomalous`` patch label.
    """
    mu, sigma, delta = spec.mean_vector, spec.sigma_vector, spec.shift_vector
    s_norm, s_anom, s_near, s_far = spawn_seeds(spec.seed, 4)
    per = spec.patches_per_slide
    normal = _pool(_gaussian(spec.n_normal, mu, sigma, s_norm), "normal", per, patch_size,
                   TissueClass.NORMAL_TARGET, Label.NORMAL)
    anomalous = _pool(_gaussian(spec.n_anomalous, mu + delta, sigma, s_anom), "anomalous", per, patch_size,
                      TissueClass.EVAL, Label.ANOMALOUS)
    near = _pool(_gaussian(spec.n_near_oe, mu + delta / 2.0, sigma, s_near), "near", per, patch_size,
                 TissueClass.NEAR_OE, Label.UNKNOWN)
    far = _pool(_gaussian(spec.n_far_oe, spec.far_mean, sigma, s_far), "far", per, patch_size,
                TissueClass.FAR_OE, Label.UNKNOWN)
    groups = {}
    if spec.groups:
        for i, sid in enumerate(anomalous.slide_ids()):
            groups[sid] = spec.groups[i % len(spec.groups)]
    return SynthPools(normal, anomalous, near, far, groups)


_POOL_ENTRY = {
    "normal": (TissueClass.NORMAL_TARGET, Label.NORMAL),
    "anomalous": (TissueClass.EVAL, Label.ANOMALOUS),
    "near": (TissueClass.NEAR_OE, Label.UNKNOWN),
    "far": (TissueClass.FAR_OE, Label.UNKNOWN),
}


def write_pools(pools: SynthPools, out_dir: PathLike) -> Path:
    """One feature file per slide under ``out_dir/features`` plus ``manifest.csv``.

    Returns the manifest path.
    """
    out_dir = Path(out_dir)
    feature_dir = out_dir / "features"
    feature_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, pool in pools.items():
        tissue_class, label = _POOL_ENTRY[name]
        for sid, matrix in pool.by_slide().items():
            path = feature_dir / f"{sid}.hadf"
            write_features(matrix, path)
            entries.append(ManifestEntry(sid, path, tissue_class, label, pools.groups.get(sid, "")))
    manifest = out_dir / "manifest.csv"
    write_manifest(entries, manifest)
    logger.info("Wrote %d synthetic slides to %s", len(entries), out_dir)
    return manifest


@dataclass(frozen=True)
class LayoutRect:
    """Axis-aligned rectangle of a raster layout; ``kind`` is tissue, anomaly or artifact."""
    kind: str
    x: int
    y: int
    width: int
    height: int

    KINDS = ("tissue", "anomaly", "artifact")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise InvalidInputError(f"Unknown layout kind '{self.kind}'")
        if self.width < 1 or self.height < 1:
            raise InvalidInputError("Layout rectangles need positive size")

    def overlaps(self, other: "LayoutRect") -> bool:
        return (self.x < other.x + other.width and other.x < self.x + self.width
                and self.y < other.y + other.height and other.y < self.y + self.height)

    @classmethod
    def from_dict(cls, data: dict) -> "LayoutRect":
        try:
            return cls(data["kind"], int(data["x"]), int(data["y"]), int(data["width"]), int(data["height"]))
        except (KeyError, TypeError) as e:
            raise InvalidInputError(f"Malformed layout entry {data!r}") from e


_COLORS = {"tissue": TISSUE_RGB, "anomaly": ANOMALY_RGB, "artifact": ARTIFACT_RGB}
_ANNOTATION = {"anomaly": AnnotationKind.DIAGNOSIS_DEFINING, "artifact": AnnotationKind.ARTIFACT}


def gen_raster(width: int, height: int, layout: Sequence[Union[LayoutRect, dict]],
               slide_id: str = "synth") -> Tuple[SlideRaster, TissueMask, List[Region]]:
    """Paint ``layout`` onto a white canvas.

    Rectangles are painted in order. Anomaly and artifact rectangles count as
    tissue and are recorded as diagnosis-defining or artifact annotations.

    Raises:
        InvalidInputError: If a rectangle leaves the canvas, or anomaly and
            artifact rectangles overlap each other.
    """
    if width < 1 or height < 1:
        raise InvalidInputError(f"Canvas must be at least 1x1, got {width}x{height}")
    rects = [r if isinstance(r, LayoutRect) else LayoutRect.from_dict(r) for r in layout]
    for r in rects:
        if r.x < 0 or r.y < 0 or r.x + r.width > width or r.y + r.height > height:
            raise InvalidInputError(f"Layout rectangle {r} leaves the {width}x{height} canvas")
    special = [r for r in rects if r.kind != "tissue"]
    for i, a in enumerate(special):
        for b in special[i + 1:]:
            if a.kind != b.kind and a.overlaps(b):
                raise InvalidInputError(f"Contradictory overlapping regions: {a} and {b}")

    pixels = np.empty((height, width, 3), dtype=np.uint8)
    pixels[...] = BACKGROUND_RGB
    truth = np.zeros((height, width), dtype=bool)
    for r in sorted(rects, key=lambda r: r.kind != "tissue"):
        pixels[r.y:r.y + r.height, r.x:r.x + r.width] = _COLORS[r.kind]
        truth[r.y:r.y + r.height, r.x:r.x + r.width] = True
    regions = [Region.rectangle(_ANNOTATION[r.kind], r.x, r.y, r.width, r.height) for r in special]
    return SlideRaster(slide_id, pixels), TissueMask(truth), regions
