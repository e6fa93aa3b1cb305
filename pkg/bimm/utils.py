"""
utils.py - low-level helpers shared by the manifest, config and validator.

Digests of checkpoints and configs, UTC timestamps, format checks for the
schema validator and a snapshot of the machine a run executed on.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import importlib.metadata as _im
import json
import os
import platform
import re
from pathlib import Path
from typing import Any

import numpy as np

try:
    import pandas as pd
except ImportError:
    pd = None

_BLOCK = 1 << 20

# --------------------------------------------------------------------------- #
# Digests & Timestamps                                                        #
# --------------------------------------------------------------------------- #

def _now_iso() -> str:
    """UTC now, ISO-8601 to the second."""
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _sha256(path: Path) -> str:
    """Hex SHA-256 of a file, read in 1 MiB blocks."""
    digest = hashlib.sha256()
    with Path(path).open("rb") as fd:
        while block := fd.read(_BLOCK):
            digest.update(block)
    return digest.hexdigest()


def _array_fingerprint(arr: np.ndarray) -> dict[str, Any]:
    # shape and dtype join the digest so a reshape or cast changes the hash
    raw = np.require(arr, requirements="C").tobytes()
    return {"ndarray": hashlib.sha256(raw).hexdigest(), "shape": list(arr.shape), "dtype": arr.dtype.str}


def _canonical(value: Any) -> Any:
    """Reduce *value* to plain JSON types, replacing arrays and frames by digests."""
    if isinstance(value, dict):
        return {str(k): _canonical(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_canonical(v) for v in value]
    if isinstance(value, np.ndarray):
        return _array_fingerprint(value)
    if isinstance(value, np.generic):
        return value.item()
    if pd is not None and isinstance(value, pd.DataFrame):
        table = value.to_json(orient="split", date_unit="ns")
        return {"dataframe": hashlib.sha256(table.encode()).hexdigest()}
    return value


def _hash(obj: Any) -> str:
    """Key-order independent SHA-256 of a config, result table or parameter dict."""
    text = json.dumps(_canonical(obj), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


# --------------------------------------------------------------------------- #
# Format Checks                                                               #
# --------------------------------------------------------------------------- #

_DATETIME = re.compile(r"\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}(?:\.\d{1,6})?(?:Z|[+\-]\d{2}:\d{2})")
_DATE = re.compile(r"\d{4}-\d{2}-\d{2}")


def _parses(value: Any, pattern: re.Pattern[str], parse) -> bool:
    if not isinstance(value, str) or pattern.fullmatch(value) is None:
        return False
    try:
        parse(value)
    except ValueError:
        return False
    return True


def _is_datetime(value: Any) -> bool:
    """Timezone-qualified ISO-8601 date-time string."""
    return _parses(value, _DATETIME, lambda s: _dt.datetime.fromisoformat(s.replace("Z", "+00:00")))


def _is_date(value: Any) -> bool:
    return _parses(value, _DATE, _dt.date.fromisoformat)


_TYPE_MAP: dict[str, type | tuple[type, ...]] = {
    "string": str,
    "integer": int,
    "number": (int, float),
    "boolean": bool,
    "object": dict,
    "list": list,
    "null": type(None),
}
if pd is not None:
    _TYPE_MAP["dataframe"] = pd.DataFrame


# --------------------------------------------------------------------------- #
# Run Environment                                                             #
# --------------------------------------------------------------------------- #

_TRACKED_LIBRARIES = ("numpy", "scipy", "Pillow", "PyYAML", "pandas", "hypothesis")


def _library_versions() -> dict[str, str]:
    """Installed versions of the libraries a run's numbers depend on; absent ones are left out."""
    versions: dict[str, str] = {}
    for name in _TRACKED_LIBRARIES:
        try:
            versions[name] = _im.version(name)
        except _im.PackageNotFoundError:
            continue
    return versions


def _total_ram() -> str:
    try:
        pages, size = os.sysconf("SC_PHYS_PAGES"), os.sysconf("SC_PAGE_SIZE")
    except (AttributeError, ValueError, OSError):
        return ""
    return f"{round(pages * size / 2**30)} GB"


def _hardware_specs() -> dict[str, str]:
    """CPU label with core count, visible accelerators and physical memory."""
    cpu = platform.processor() or platform.machine()
    cores = os.cpu_count()
    gpu = os.getenv("CUDA_VISIBLE_DEVICES") or os.getenv("NVIDIA_VISIBLE_DEVICES", "")
    return {"cpu": f"{cpu} x{cores}" if cores else cpu, "gpu": gpu, "ram": _total_ram()}


def _os_label() -> str:
    return f"{platform.system()} {platform.release()}"
