"""Configuration validation."""

from .config_validator import ConfigValidator, ValidationResult

__all__ = ["ConfigValidator", "ValidationResult"]
