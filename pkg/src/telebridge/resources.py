"""Locations of the packaged data files."""

from __future__ import annotations

from importlib import resources
from pathlib import Path


def data_dir() -> Path:
    return Path(str(resources.files("telebridge") / "data"))


def data_path(*parts: str) -> Path:
    return data_dir().joinpath(*parts)
