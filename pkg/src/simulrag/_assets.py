"""Access to bundled package assets (prompts, handbooks, grids, fixtures)."""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path


def asset_root() -> Path:
    return Path(str(resources.files("simulrag").joinpath("assets")))


def asset_path(relpath: str) -> Path:
    path = asset_root() / relpath
    if not path.exists():
        raise FileNotFoundError(f"bundled asset not found: {relpath}")
    return path


def asset_text(relpath: str) -> str:
    return asset_path(relpath).read_text(encoding="utf-8")


def asset_bytes(relpath: str) -> bytes:
    return asset_path(relpath).read_bytes()


def asset_json(relpath: str):
    return json.loads(asset_text(relpath))
