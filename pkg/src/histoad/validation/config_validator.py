"""Cross-section checks of a pipeline configuration.

Each config dataclass validates its own fields on construction. This module
checks combinations that only make sense together and flags settings that
are legal but probably unintended.
"""

from dataclasses import dataclass, field
from typing import List

from ..config import PipelineConfig
from ..models.losses import OE_OBJECTIVES


@dataclass
class ValidationResult:
    """Outcome of a config check.

    Attributes:
        is_valid: False when any error was found.
        errors: Problems that make the config unusable.
        warnings: Legal settings worth a second look.
        sections_checked: Number of config sections inspected.

    Examples:
        >>> result = ValidationResult.success(13)
        >>> result.is_valid
        True
    """
    is_valid: bool
    errors: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    sections_checked: int = 0

    @classmethod
    def success(cls, sections_checked: int, warnings: List[str] = None) -> "ValidationResult":
        return cls(is_valid=True, errors=[], warnings=list(warnings or []),
                   sections_checked=sections_checked)

    @classmethod
    def failure(cls, errors: List[str], warnings: List[str], sections_checked: int) -> "ValidationResult":
        return cls(is_valid=False, errors=list(errors), warnings=list(warnings),
                   sections_checked=sections_checked)


class ConfigValidator:
    """Validates a :class:`~histoad.config.PipelineConfig`.

    Examples:
        >>> result = ConfigValidator().validate(PipelineConfig())
        >>> result.is_valid
        True
    """

    def validate(self, config: PipelineConfig) -> ValidationResult:
        errors: List[str] = []
        warnings: List[str] = []
        tile, heatmap = config.tile, config.heatmap

        if heatmap.overlap >= tile.patch_size:
            errors.append(
                f"heatmap.overlap ({heatmap.overlap}) must be smaller than tile.patch_size ({tile.patch_size})"
            )
        if config.oe_sampler.batch_size != config.train.batch_size:
            errors.append(
                f"oe_sampler.batch_size ({config.oe_sampler.batch_size}) differs from "
                f"train.batch_size ({config.train.batch_size})"
            )
        if config.train.objective in OE_OBJECTIVES and config.train.batch_size % 4:
            errors.append("train.batch_size must be a multiple of 4 for outlier-exposure objectives")
        if config.eval.knn_max_reference is not None and config.eval.knn_max_reference < config.knn.k:
            errors.append(
                f"eval.knn_max_reference ({config.eval.knn_max_reference}) is smaller than knn.k ({config.knn.k})"
            )
        if config.eval.max_train_slides is not None and config.eval.max_train_slides < 1:
            errors.append("eval.max_train_slides must be positive")

        if config.train.steps == 0:
            warnings.append("train.steps is 0: models keep their initialization")
        if tile.stride < tile.patch_size:
            warnings.append(f"tile.stride ({tile.stride}) overlaps training patches")
        if config.tissue.s_min <= 0.0 or config.tissue.v_max >= 1.0:
            warnings.append("tissue thresholds accept (almost) every pixel as tissue")
        if config.oe_filter.cosine_threshold >= 1.0:
            warnings.append("oe_filter.cosine_threshold 1.0 only removes exact-direction duplicates")
        if config.stain_target is None:
            warnings.append("no stain target configured; raster stages skip normalization")

        sections = len(config.to_dict())
        if errors:
            return ValidationResult.failure(errors, warnings, sections)
        return ValidationResult.success(sections, warnings)
