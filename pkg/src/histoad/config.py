"""Pipeline configuration.

One JSON document configures every stage. Each top-level key names a section
whose keys are the fields of that stage's config dataclass; missing keys keep
their defaults and unknown keys are rejected. The defaults are the values the
method was published with (340 px patches, 80% background limit, 75 px heatmap
overlap, batch 32, SGD lr 5e-4 with momentum 0.9 and weight decay 1e-4,
one-class lr 1e-2 with gradient clipping at 1e-3, 0.9 cosine OE filter,
10 test-time views, top-10% aggregation, 5 folds).

Config file resolution, first match wins:

1. an explicit path (the CLI's ``--config``),
2. the ``HISTOAD_CONFIG`` environment variable,
3. the bundled ``resources/default_config.json``.

Example:
    >>> cfg = load_config()
    >>> cfg = cfg.override("train", seed=7, steps=2000)
    >>> cfg.train.learning_rate
    0.0005
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional, Union

from .errors import ConfigurationError, InvalidInputError
from .evaluation.crossval import CrossvalSettings, EvalConfig
from .features.oe import OeFilterConfig, OeSamplerConfig
from .models.trainer import ModelConfig, TrainConfig
from .preprocessing.augment import AugmentConfig
from .preprocessing.stainnorm import LabStats
from .preprocessing.tiler import TileSpec, TissueDetectConfig
from .resources import get_default_config_path
from .scoring.aggregate import AggregationConfig
from .scoring.heatmap import HeatmapConfig
from .scoring.scorers import KnnConfig, TtaConfig

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
CONFIG_ENV_VAR = "HISTOAD_CONFIG"


@dataclass(frozen=True)
class PathsConfig:
    """File locations named by the config.

    ``stain_target`` is a LabStats JSON file; a relative path resolves against
    the directory of the config file that names it.
    """
    stain_target: Optional[str] = None


SECTIONS = {
    "tile": TileSpec,
    "tissue": TissueDetectConfig,
    "augment": AugmentConfig,
    "train": TrainConfig,
    "model": ModelConfig,
    "knn": KnnConfig,
    "aggregation": AggregationConfig,
    "tta": TtaConfig,
    "oe_filter": OeFilterConfig,
    "oe_sampler": OeSamplerConfig,
    "eval": EvalConfig,
    "heatmap": HeatmapConfig,
    "paths": PathsConfig,
}


@dataclass(frozen=True)
class PipelineConfig:
    """Every stage's settings. ``stain_target`` is None until computed."""
    tile: TileSpec = field(default_factory=TileSpec)
    tissue: TissueDetectConfig = field(default_factory=TissueDetectConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    knn: KnnConfig = field(default_factory=KnnConfig)
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)
    tta: TtaConfig = field(default_factory=TtaConfig)
    oe_filter: OeFilterConfig = field(default_factory=OeFilterConfig)
    oe_sampler: OeSamplerConfig = field(default_factory=OeSamplerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    heatmap: HeatmapConfig = field(default_factory=HeatmapConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    stain_target: Optional[LabStats] = None

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PipelineConfig":
        """Build a config from parsed JSON.

        Raises:
            ConfigurationError: On unknown sections or keys, or invalid values.
        """
        if not isinstance(data, dict):
            raise ConfigurationError("Config must be a JSON object")
        unknown = sorted(set(data) - set(SECTIONS) - {"stain_target"})
        if unknown:
            raise ConfigurationError(f"Unknown config section(s): {', '.join(unknown)}")
        kwargs: Dict[str, Any] = {}
        for name, section_cls in SECTIONS.items():
            if name in data:
                kwargs[name] = _build_section(name, section_cls, data[name])
        target = data.get("stain_target")
        if target is not None:
            try:
                kwargs["stain_target"] = LabStats.from_dict(target)
            except InvalidInputError as e:
                raise ConfigurationError(f"Invalid stain_target: {e}") from e
        return cls(**kwargs)

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Invalid config JSON: {e}") from e
        return cls.from_dict(data)

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {name: _plain(asdict(getattr(self, name))) for name in SECTIONS}
        out["stain_target"] = self.stain_target.to_dict() if self.stain_target else None
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def override(self, section: str, **values) -> "PipelineConfig":
        """Copy with some fields of one section replaced; ``None`` values are ignored."""
        if section not in SECTIONS:
            raise ConfigurationError(f"Unknown config section '{section}'")
        values = {k: v for k, v in values.items() if v is not None}
        if not values:
            return self
        current = getattr(self, section)
        merged = {**asdict(current), **values}
        return replace(self, **{section: _build_section(section, SECTIONS[section], merged)})

    def with_stain_target(self, target: Optional[LabStats]) -> "PipelineConfig":
        return replace(self, stain_target=target)

    def heatmap_tile_spec(self) -> TileSpec:
        return TileSpec.for_heatmap(self.tile.patch_size, self.heatmap.overlap,
                                    self.tile.max_background_fraction)

    def crossval_settings(self) -> CrossvalSettings:
        return CrossvalSettings(eval=self.eval, train=self.train, model=self.model, knn=self.knn,
                                aggregation=self.aggregation, oe_filter=self.oe_filter,
                                oe_sampler=self.oe_sampler)


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value


def _build_section(name: str, section_cls, values: Any):
    if not isinstance(values, dict):
        raise ConfigurationError(f"Config section '{name}' must be an object")
    known = {f.name for f in fields(section_cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigurationError(f"Unknown key(s) in section '{name}': {', '.join(unknown)}")
    converted = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
    try:
        return section_cls(**converted)
    except (InvalidInputError, ConfigurationError, TypeError) as e:
        raise ConfigurationError(f"Invalid value in section '{name}': {e}") from e


def resolve_config_path(path: Optional[PathLike] = None) -> Path:
    if path is not None:
        return Path(path)
    env = os.environ.get(CONFIG_ENV_VAR)
    if env:
        return Path(env)
    return get_default_config_path()


def load_config(path: Optional[PathLike] = None) -> PipelineConfig:
    """Load the pipeline config (see module docstring for path resolution).

    Raises:
        FileNotFoundError: If the resolved file does not exist.
        ConfigurationError: If it is not valid JSON or not a valid config.
    """
    resolved = resolve_config_path(path)
    if not resolved.exists():
        raise FileNotFoundError(f"Config file not found: {resolved}")
    try:
        data = json.loads(resolved.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"{resolved}: invalid JSON ({e})") from e
    logger.debug("Loaded config from %s", resolved)
    cfg = PipelineConfig.from_dict(data)
    if cfg.stain_target is None and cfg.paths.stain_target:
        target_path = Path(cfg.paths.stain_target)
        if not target_path.is_absolute():
            target_path = resolved.parent / target_path
        if not target_path.exists():
            raise FileNotFoundError(f"Stain target file not found: {target_path}")
        cfg = cfg.with_stain_target(LabStats.from_json(target_path.read_text(encoding="utf-8")))
    return cfg
