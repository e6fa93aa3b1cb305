"""
parser.py - command-line / JSON / YAML / mapping config loader
==============================================================

Public API
----------
`add_schema_flags(parser, schema) -> argparse.ArgumentParser`
    Expose every leaf field of a nested config schema as a dotted flag
    (``--model.depth``, ``--mask.ratio-video`` ...).

`build_arg_parser(schema) -> argparse.ArgumentParser`
    Stand-alone parser with ``--config`` plus the schema flags.

`parse_input(source=None, *, schema) -> dict`
    Convert user-supplied *source* (CLI tokens / Path / JSON or YAML literal /
    Mapping) into a nested ``dict`` following the schema's field names.

`parse_assignment(text) -> (key, value)`
    ``section.field=value`` with the value read as YAML (``4``, ``0.9``,
    ``[2, 4, 12]``, ``true``, ``partial``).
"""

from __future__ import annotations

import argparse
import copy
import json
import shlex
import sys
from pathlib import Path
from typing import Any, Iterator, Mapping, Sequence

import yaml

from .errors import ConfigError, UsageError

__all__ = [
    "add_schema_flags",
    "build_arg_parser",
    "parse_input",
    "parse_assignment",
    "nest",
]

# --------------------------------------------------------------------------- #
# Parser builder                                                              #
# --------------------------------------------------------------------------- #

def _leaves(schema: Mapping[str, Any], prefix: str = "") -> Iterator[tuple[str, Mapping[str, Any]]]:
    for name, spec in schema.get("fields", {}).items():
        dotted = f"{prefix}{name}"
        if "fields" in spec:
            yield from _leaves(spec, dotted + ".")
        else:
            yield dotted, spec


def _list_item(spec: Mapping[str, Any]):
    item = spec.get("items", {}).get("type", "string")
    item = item[0] if isinstance(item, list) else item
    return int if item == "integer" else float if item == "number" else str


def add_schema_flags(p: argparse.ArgumentParser, schema: Mapping[str, Any]) -> argparse.ArgumentParser:
    """Add one ``--section.field`` flag per leaf of *schema* (defaults suppressed)."""
    group = p.add_argument_group("config overrides")
    for dotted, spec in _leaves(schema):
        flag = "--" + dotted.replace("_", "-")
        types = spec.get("type", "string")
        types = types if isinstance(types, list) else [types]
        kwargs: dict[str, Any] = {
            "dest": dotted,
            "help": spec.get("description", ""),
            "default": argparse.SUPPRESS,
        }
        if "boolean" in types:
            kwargs["type"] = _boolean
            kwargs["metavar"] = "{true,false}"
        elif "list" in types:
            kwargs["type"] = _list_item(spec)
            kwargs["nargs"] = "+"
        elif "integer" in types:
            kwargs["type"] = int
        elif "number" in types:
            kwargs["type"] = float
        else:
            kwargs["type"] = str
        if "enum" in spec:
            kwargs["choices"] = [c for c in spec["enum"] if c is not None]
        group.add_argument(flag, **kwargs)
    return p


def _boolean(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got '{text}'")


class _RaisingParser(argparse.ArgumentParser):
    """``ArgumentParser`` that raises :class:`UsageError` instead of exiting."""

    def error(self, message: str):  # type: ignore[override]
        raise UsageError(f"{self.prog}: {message}")


def build_arg_parser(schema: Mapping[str, Any]) -> argparse.ArgumentParser:
    """Return an :pyclass:`argparse.ArgumentParser` for *schema*.

    The parser understands ``--config FILE`` (JSON or YAML, overrides all
    other flags) and one dotted flag per schema leaf.
    """
    p = _RaisingParser(
        description=schema.get("description", ""),
        fromfile_prefix_chars="@",
        add_help=False,
    )
    p.add_argument("-h", "--help", action="help", help="Show this help message and exit.")
    if "version" in schema:
        p.add_argument(
            "--version",
            action="version",
            version=f"{schema.get('title', 'schema')} : {schema['version']}",
            help="Print schema version and exit.",
        )
    p.add_argument(
        "--config",
        metavar="FILE",
        help="JSON or YAML file containing the full config object; overrides all other flags.",
    )
    return add_schema_flags(p, schema)


# --------------------------------------------------------------------------- #
# Input parsing utility                                                       #
# --------------------------------------------------------------------------- #

def nest(flat: Mapping[str, Any]) -> dict[str, Any]:
    """``{"model.depth": 4}`` -> ``{"model": {"depth": 4}}``."""
    out: dict[str, Any] = {}
    for dotted, value in flat.items():
        node = out
        *parents, leaf = dotted.split(".")
        for part in parents:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"'{dotted}' conflicts with the scalar value at '{part}'")
            node = child
        node[leaf] = value
    return out


def parse_input(
    source: None | str | Path | Sequence[str] | Mapping[str, Any] = None,
    *,
    schema: Mapping[str, Any],
) -> dict[str, Any]:
    """Convert *source* to a *raw* nested ``dict`` (no defaults, no validation).

    Parameters
    ----------
    source
        Supported variants:
        * ``Mapping`` - copied directly.
        * ``Path`` - JSON or YAML file on disk.
        * ``str``  - existing file path to load; else JSON/YAML literal; else CLI string.
        * ``Sequence[str]`` - treated as CLI tokens.
        * ``None`` - default to ``sys.argv[1:]``.
    schema
        The schema that drives CLI flag generation when *source* is CLI-style.
    """

    # Mapping - already dict-like ------------------------------------------
    if isinstance(source, Mapping):
        return copy.deepcopy(dict(source))

    # Path - read JSON/YAML file -------------------------------------------
    if isinstance(source, Path):
        return _load_file(source)

    # Decide how to treat *source* -----------------------------------------
    argv: list[str]
    if isinstance(source, str):
        p = Path(source)
        if p.is_file():
            return _load_file(p)
        try:
            obj = json.loads(source)
            if isinstance(obj, Mapping):
                return dict(obj)
        except json.JSONDecodeError:
            pass
        try:
            yaml_obj = yaml.safe_load(source)
            if isinstance(yaml_obj, Mapping):
                return copy.deepcopy(dict(yaml_obj))
        except yaml.YAMLError:
            pass
        argv = shlex.split(source)
    elif source is None:
        argv = sys.argv[1:]
    elif isinstance(source, Sequence) and not isinstance(source, (str, bytes)):
        argv = list(source)
    else:
        raise TypeError(f"Unsupported type for parse_input: {type(source)}")

    # CLI style - use argparse ---------------------------------------------
    parser = build_arg_parser(schema)
    namespace, unknown = parser.parse_known_args(argv)
    if unknown:
        raise UsageError(f"Unknown argument(s): {unknown}. Use --help.")
    ns_dict = vars(namespace)

    # --config overrides everything else -----------------------------------
    if config_file := ns_dict.pop("config", None):
        return _load_file(Path(config_file))

    return nest(ns_dict)


def parse_assignment(text: str) -> tuple[str, Any]:
    """Split ``key=value`` and read the value as YAML."""
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise UsageError(f"expected KEY=VALUE, got '{text}'")
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as exc:
        raise UsageError(f"cannot read value of '{key}': {exc}") from exc
    return key.strip(), value


def _load_file(path: Path) -> dict[str, Any]:
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return _load_structured_text(path.read_text(encoding="utf-8"), source=path)


def _load_structured_text(text: str, *, source: Path) -> dict[str, Any]:
    """Load a dict from JSON, falling back to YAML."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError:
        try:
            obj = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"Invalid JSON or YAML in {source}: {exc}") from exc

    if obj is None:
        return {}
    if not isinstance(obj, Mapping):
        raise ConfigError(f"Expected top-level object in {source}, got {type(obj).__name__}")
    return copy.deepcopy(dict(obj))
