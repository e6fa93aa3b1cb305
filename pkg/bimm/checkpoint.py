"""
checkpoint.py - bit-exact binary parameter files.

Layout
------
=============  ==========================================================
bytes 0-3      magic ``b"BIMM"``
bytes 4-7      format version, uint32 little-endian (currently 1)
bytes 8-15     header length *L*, uint64 little-endian
next *L*       UTF-8 JSON header (sorted keys): ``config``, ``tensors`` and
               ``blob_sha256``
remainder      tensor blob, little-endian float32, in ``ParamStore`` order
=============  ==========================================================

Each ``tensors`` entry is ``{"name", "dtype", "shape", "offset", "length"}``
with offsets relative to the blob start; entries never overlap.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import (
    CheckpointCorruptionError,
    CheckpointFormatError,
    CheckpointVersionError,
    ContractError,
    DataError,
)
from .params import ParamStore
from .tensor import Tensor

__all__ = [
    "MAGIC",
    "FORMAT_VERSION",
    "save_checkpoint",
    "load_checkpoint",
    "restore_into",
    "read_header",
    "write_arrays",
    "load_arrays",
]

log = logging.getLogger(__name__)

MAGIC = b"BIMM"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sIQ")
_DTYPE = np.dtype("<f4")


def _encode(arrays: Mapping[str, np.ndarray], config: Mapping[str, Any] | None) -> bytes:
    directory = []
    chunks = []
    offset = 0
    for name, value in arrays.items():
        data = np.ascontiguousarray(np.asarray(value), dtype=_DTYPE).tobytes()
        directory.append(
            {"name": name, "dtype": "float32", "shape": list(np.shape(value)), "offset": offset, "length": len(data)}
        )
        chunks.append(data)
        offset += len(data)
    blob = b"".join(chunks)
    header = {
        "config": dict(config or {}),
        "tensors": directory,
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(MAGIC, FORMAT_VERSION, len(header_bytes)) + header_bytes + blob


def write_arrays(path: str | Path, arrays: Mapping[str, np.ndarray], config: Mapping[str, Any] | None = None) -> Path:
    """Write named arrays in the checkpoint format (also used for target dumps)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(_encode(arrays, config))
    tmp.replace(path)
    return path


def save_checkpoint(path: str | Path, store: ParamStore, config: Mapping[str, Any] | None = None) -> Path:
    """Every tensor of *store*, in store order, plus the run configuration."""
    path = write_arrays(path, {name: t.data for name, t in store.items()}, config)
    log.info("saved %d tensors to %s", len(store), path)
    return path


def _split(raw: bytes, source: str) -> tuple[dict, bytes]:
    if len(raw) < _PREFIX.size:
        if raw[:4] != MAGIC[: len(raw[:4])]:
            raise CheckpointFormatError(f"{source}: not a bimm checkpoint (bad magic)")
        raise CheckpointCorruptionError(f"{source}: truncated before the header")
    magic, version, header_len = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointFormatError(f"{source}: not a bimm checkpoint (magic {magic!r})")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{source}: format version {version}, this build reads {FORMAT_VERSION}")
    end = _PREFIX.size + header_len
    if len(raw) < end:
        raise CheckpointCorruptionError(f"{source}: truncated header ({len(raw)} of {end} bytes)")
    try:
        header = json.loads(raw[_PREFIX.size:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointCorruptionError(f"{source}: header is not valid JSON") from exc
    return header, raw[end:]


def _read(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc.strerror or exc}") from exc


def read_header(path: str | Path) -> dict:
    path = Path(path)
    header, _ = _split(_read(path), str(path))
    return header


def load_arrays(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Arrays keyed by name, in file order, and the stored config."""
    path = Path(path)
    header, blob = _split(_read(path), str(path))
    try:
        entries = header["tensors"]
        expected_hash = header["blob_sha256"]
    except KeyError as exc:
        raise CheckpointCorruptionError(f"{path}: header misses {exc}") from exc
    size = sum(int(e["length"]) for e in entries)
    if len(blob) != size:
        raise CheckpointCorruptionError(f"{path}: tensor blob has {len(blob)} bytes, directory says {size}")
    if hashlib.sha256(blob).hexdigest() != expected_hash:
        raise CheckpointCorruptionError(f"{path}: tensor blob digest mismatch")

    arrays: dict[str, np.ndarray] = {}
    cursor = 0
    for entry in entries:
        offset, length, shape = int(entry["offset"]), int(entry["length"]), tuple(entry["shape"])
        if offset != cursor or length != int(np.prod(shape, dtype=np.int64)) * _DTYPE.itemsize:
            raise CheckpointCorruptionError(f"{path}: inconsistent directory entry for '{entry['name']}'")
        arrays[entry["name"]] = np.frombuffer(blob, dtype=_DTYPE, count=length // 4, offset=offset).reshape(shape).copy()
        cursor += length
    return arrays, header.get("config", {})


def load_checkpoint(path: str | Path) -> tuple[ParamStore, dict]:
    """Rebuild the ``ParamStore`` (float32 leaves) and return the stored config."""
    arrays, config = load_arrays(path)
    store = ParamStore(
        (name, Tensor(value, requires_grad=True, dtype=np.float32, name=name)) for name, value in arrays.items()
    )
    return store, config


def restore_into(target: ParamStore, source: ParamStore) -> None:
    """Copy every value of *source* into the same-named tensors of *target*."""
    missing = [n for n in target if n not in source]
    if missing:
        raise ContractError(f"checkpoint lacks {len(missing)} parameters, e.g. '{missing[0]}'")
    for name, tensor in target.items():
        value = source[name].data
        if value.shape != tensor.shape:
            raise ContractError(f"'{name}': checkpoint shape {value.shape} vs model shape {tensor.shape}")
        tensor.data[...] = value
