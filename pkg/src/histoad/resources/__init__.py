"""Locate files bundled with the histoad package.

Resources are found with ``importlib.resources`` so they resolve the same way
for normal, editable and wheel installs.

Available Resources:
    - default_config.json: pipeline config holding the published defaults

Examples:
    >>> from histoad.resources import get_default_config_path
    >>> path = get_default_config_path()
    >>> path.name
    'default_config.json'
"""

from importlib.resources import files
from pathlib import Path


def get_resource_path(name: str) -> Path:
    """Path of a bundled resource file by file name."""
    return Path(str(files("histoad.resources") / name))


def get_default_config_path() -> Path:
    return get_resource_path("default_config.json")


__all__ = ["get_resource_path", "get_default_config_path"]
