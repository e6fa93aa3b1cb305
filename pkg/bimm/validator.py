"""
validator.py - JSON-Schema-lite validation for configs and run manifests
=======================================================================

Every document the package reads or writes (run configs, presets, run
manifests, and the bundled schemas themselves) is checked by the same
recursive engine.

Public API
----------
SchemaError
    Raised for any violation; a :class:`~bimm.errors.ConfigError`.

validate(value, *, schema, path="root")
    Depth-first validation of type, enum, format, numeric bounds, required
    fields, additionalProperties and list items.

inject_defaults(value, *, schema) -> dict
    Copy of *value* with every missing field that declares a ``default``
    filled in, recursing into nested objects.
"""

from __future__ import annotations

import copy
import re
from typing import Any, Mapping

from . import utils
from .errors import ConfigError

__all__ = [
    "SchemaError",
    "validate",
    "inject_defaults",
]

# --------------------------------------------------------------------------- #
# Exceptions                                                                  #
# --------------------------------------------------------------------------- #

class SchemaError(ConfigError):
    """Raised when a document violates the supplied schema."""


# --------------------------------------------------------------------------- #
# Core recursive validator                                                    #
# --------------------------------------------------------------------------- #

def _matches_type(value: Any, name: str) -> bool:
    # bool is an int subclass; a flag is never a count
    if name in ("integer", "number") and isinstance(value, bool):
        return False
    return isinstance(value, utils._TYPE_MAP.get(name, object))


def _check_bounds(value: Any, schema: Mapping[str, Any], path: str) -> None:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        return
    lo, hi = schema.get("minimum"), schema.get("maximum")
    if lo is not None and value < lo:
        raise SchemaError(f"{path}: {value} is below minimum {lo}")
    if hi is not None and value > hi:
        raise SchemaError(f"{path}: {value} is above maximum {hi}")
    xlo, xhi = schema.get("exclusiveMinimum"), schema.get("exclusiveMaximum")
    if xlo is not None and value <= xlo:
        raise SchemaError(f"{path}: {value} must be greater than {xlo}")
    if xhi is not None and value >= xhi:
        raise SchemaError(f"{path}: {value} must be less than {xhi}")


def validate(value: Any, *, schema: Mapping[str, Any], path: str = "root") -> None:
    """Recursively assert that *value* satisfies *schema*.

    Supported keywords:

    * ``type`` (list or scalar) and ``enum``
    * ``format: date-time`` / ``date``
    * ``pattern`` / ``minLength`` for strings
    * ``minimum`` / ``maximum`` / ``exclusiveMinimum`` / ``exclusiveMaximum``
    * object validation via ``fields`` / ``required`` / ``additionalProperties``
      / ``propertyNamesPattern`` / ``minProperties``
    * list validation via ``items`` or the ``subtype`` shorthand
      / ``minItems`` / ``maxItems``
    """

    stype = schema.get("type")
    if stype is None and "fields" in schema:
        stype = ["object"]  # implicit object when only `fields` is present

    # 1) type check ---------------------------------------------------------
    if stype:
        allowed = list(stype) if isinstance(stype, (list, tuple)) else [stype]
        if not any(_matches_type(value, t) for t in allowed):
            raise SchemaError(f"{path}: expected {allowed}, got {type(value).__name__}")

    # 2) enum --------------------------------------------------------------
    if "enum" in schema and value not in schema["enum"]:
        raise SchemaError(f"{path}: '{value}' not in {schema['enum']}")

    # 3) scalar constraints -------------------------------------------------
    fmt = schema.get("format")
    if fmt == "date-time" and not utils._is_datetime(value):
        raise SchemaError(f"{path}: '{value}' is not ISO-8601 date-time")
    if fmt == "date" and not utils._is_date(value):
        raise SchemaError(f"{path}: '{value}' is not ISO-8601 date")

    _check_bounds(value, schema, path)

    if isinstance(value, str):
        pattern = schema.get("pattern")
        if pattern is not None and re.fullmatch(pattern, value) is None:
            raise SchemaError(f"{path}: '{value}' does not match pattern '{pattern}'")

        min_length = schema.get("minLength")
        if min_length is not None and len(value) < min_length:
            raise SchemaError(f"{path}: length {len(value)} is less than minLength {min_length}")

    # 4) object recursion ---------------------------------------------------
    if isinstance(value, dict):
        min_properties = schema.get("minProperties")
        if min_properties is not None and len(value) < min_properties:
            raise SchemaError(f"{path}: has {len(value)} properties, below minProperties {min_properties}")

        key_pattern = schema.get("propertyNamesPattern")
        if key_pattern is not None:
            for key in value:
                if re.fullmatch(key_pattern, key) is None:
                    raise SchemaError(
                        f"{path}: key '{key}' does not match propertyNamesPattern '{key_pattern}'"
                    )

        fields = schema.get("fields")
        addl = schema.get("additionalProperties", True)
        if fields is not None:
            required = {k for k, meta in fields.items() if meta.get("required")}
            missing = required - set(value)
            if missing:
                raise SchemaError(f"{path}: missing required {sorted(missing)}")

            extras = set(value) - set(fields)
            if addl is False and extras:
                raise SchemaError(f"{path}: unexpected fields {sorted(extras)}")
            for k, v in value.items():
                child_path = f"{path}.{k}" if path else k
                if k in fields:
                    validate(v, schema=fields[k], path=child_path)
                elif isinstance(addl, Mapping):
                    validate(v, schema=addl, path=child_path)
        else:
            if addl is False and value:
                raise SchemaError(f"{path}: unexpected fields {sorted(value)}")
            if isinstance(addl, Mapping):
                for k, v in value.items():
                    child_path = f"{path}.{k}" if path else k
                    validate(v, schema=addl, path=child_path)

    # 5) list recursion -----------------------------------------------------
    if isinstance(value, list):
        min_items, max_items = schema.get("minItems"), schema.get("maxItems")
        if min_items is not None and len(value) < min_items:
            raise SchemaError(f"{path}: has {len(value)} items, below minItems {min_items}")
        if max_items is not None and len(value) > max_items:
            raise SchemaError(f"{path}: has {len(value)} items, above maxItems {max_items}")

        if "items" in schema:
            item_schema = schema["items"]
        elif "subtype" in schema:
            item_schema = {"type": [schema["subtype"]]}
        else:
            item_schema = None
        if item_schema is not None:
            for idx, item in enumerate(value):
                validate(item, schema=item_schema, path=f"{path}[{idx}]")


# --------------------------------------------------------------------------- #
# Defaults                                                                    #
# --------------------------------------------------------------------------- #

def inject_defaults(value: Mapping[str, Any], *, schema: Mapping[str, Any]) -> dict[str, Any]:
    """Return a deep copy of *value* with schema defaults filled in.

    A missing object field without its own ``default`` but with ``fields`` is
    created empty so its children's defaults apply.
    """
    out = copy.deepcopy(dict(value))
    for name, spec in schema.get("fields", {}).items():
        if name not in out:
            if "default" in spec:
                out[name] = copy.deepcopy(spec["default"])
            elif "fields" in spec:
                out[name] = {}
            else:
                continue
        if isinstance(out[name], dict) and "fields" in spec:
            out[name] = inject_defaults(out[name], schema=spec)
    return out
