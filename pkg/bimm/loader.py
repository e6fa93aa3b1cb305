"""
loader.py - packaged schemas and configuration presets.

Public API
----------
load_schema(path) -> dict
    A fresh copy of a schema, read from disk when *path* names a file and
    from the ``bimm.schemas`` package data otherwise.

load_preset(name) -> dict
    A fresh copy of a bundled run configuration (``toy``, ``desk``) or of a
    config file on disk.
"""

from __future__ import annotations

import copy
import json
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError

__all__ = ["load_schema", "load_preset", "PRESETS"]

PRESETS = ("toy", "desk")

# --------------------------------------------------------------------------- #
# Helpers                                                                     #
# --------------------------------------------------------------------------- #

def _read(path: Path) -> Mapping[str, Any]:
    """Read & parse a JSON document, raising crisp errors on failure."""
    try:
        with path.open(encoding="utf-8") as fd:
            return json.load(fd)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"Invalid JSON in {path}: {exc}") from exc


def _packaged(package: str, path: str | Path, what: str) -> dict:
    p = Path(path)

    # 1) direct file on disk ------------------------------------------------
    if p.is_file():
        return copy.deepcopy(dict(_read(p)))

    # 2) bundled resource (exact string or basename) -----------------------
    pkg = resources.files(package)
    names = [p.name, str(path)]
    if not p.suffix:
        names.insert(0, f"{p.name}.json")
    for name in names:
        try:
            text = pkg.joinpath(name).read_text(encoding="utf-8")
        except (FileNotFoundError, IsADirectoryError):
            continue
        try:
            return copy.deepcopy(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"Invalid JSON in packaged {what} '{name}': {exc}") from exc

    # 3) give up -----------------------------------------------------------
    raise ConfigError(f"{what.capitalize()} '{path}' not found on disk or in package data")


# --------------------------------------------------------------------------- #
# Public utilities                                                            #
# --------------------------------------------------------------------------- #

def load_schema(path: str | Path) -> dict:
    return _packaged("bimm.schemas", path, "schema")


def load_preset(name: str | Path) -> dict:
    return _packaged("bimm.presets", name, "preset")
