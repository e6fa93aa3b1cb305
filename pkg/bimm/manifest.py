"""
manifest.py - the schema-checked record of one command-line run.
"""
from __future__ import annotations

import datetime as _dt
import getpass
import json
import platform
import uuid
from pathlib import Path
from typing import Any, Mapping, Sequence

from . import loader, utils, validator

__all__ = ["RunManifest", "MANIFEST_SCHEMA", "MANIFEST_NAME"]

MANIFEST_SCHEMA = "run_manifest_schema.json"
MANIFEST_NAME = "run_manifest.json"


class RunManifest(dict):
    """Command, config, artifacts and environment of a run, validated on finalise."""

    def __init__(self, *, command: str, argv: Sequence[str] = (), schema: Mapping[str, Any] | None = None):
        super().__init__(command=command, argv=list(argv), messages=[], artifacts={}, results={})
        self.__schema = schema if schema is not None else loader.load_schema(MANIFEST_SCHEMA)
        self.__finalised = False
        self["initialization_dtg"] = utils._now_iso()

    @property
    def finalised(self) -> bool:
        return self.__finalised

    def set_config(self, config: Any) -> None:
        """Record a :class:`bimm.config.Config` (or a plain mapping)."""
        raw = config.to_dict() if hasattr(config, "to_dict") else dict(config)
        self["config"] = raw
        self["config_hash"] = utils._hash(raw)
        self["seed"] = raw.get("seed")

    def add_message(self, level: str, text: str) -> None:
        """Append a timestamped message; a no-op once finalised."""
        if self.__finalised:
            return
        self["messages"].append({"timestamp": utils._now_iso(), "level": level.upper(), "text": text})

    def add_artifact(self, path: str | Path, root: str | Path) -> str:
        """Record *path* (relative to *root*) with the SHA-256 of its bytes."""
        path = Path(path)
        digest = utils._sha256(path)
        try:
            key = path.resolve().relative_to(Path(root).resolve()).as_posix()
        except ValueError:
            key = path.as_posix()
        self["artifacts"][key] = digest
        return digest

    def finalise(self, *, exit_code: int = 0, error: str | None = None) -> None:
        """Populate timing, identity, hashes and environment, then validate."""
        if self.__finalised:
            return

        now_iso = utils._now_iso()
        self["finalization_dtg"] = now_iso
        init_dt = _dt.datetime.fromisoformat(self["initialization_dtg"].replace("Z", "+00:00"))
        end_dt = _dt.datetime.fromisoformat(now_iso.replace("Z", "+00:00"))
        self["total_runtime_seconds"] = int((end_dt - init_dt).total_seconds())
        self["run_id"] = str(uuid.uuid4())
        self["exit_code"] = int(exit_code)
        self["status"] = "success" if exit_code == 0 else "failure"
        self["error"] = error
        self["results_hash"] = utils._hash(self["results"])

        self.setdefault("execution_environment", {
            "python_version":       platform.python_version(),
            "library_dependencies": utils._library_versions(),
            "operating_system":     utils._os_label(),
            "username":             _username(),
            "hardware_specs":       utils._hardware_specs(),
        })

        validator.validate(self, schema=self.__schema)
        self.__finalised = True

    def save(self, path: Path | str, *, indent: int = 2) -> Path:
        """Write the finalised manifest as JSON."""
        if not self.__finalised:
            raise RuntimeError("RunManifest must be finalise()d before saving.")
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self, indent=indent, ensure_ascii=False, sort_keys=True), encoding="utf-8")
        return path


def _username() -> str:
    try:
        return getpass.getuser()
    except (KeyError, OSError):  # no passwd entry in some containers
        return "unknown"
