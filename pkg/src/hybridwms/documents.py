"""Strict JSON document access helpers used by every parser in the package.

All shipped documents reject unknown keys so that typos surface as
``SchemaError`` with a path instead of being silently ignored.
"""

from __future__ import annotations

import json
from pathlib import Path

from .errors import SchemaError


def load_json(path) -> object:
    path = Path(path)
    if not path.exists():
        raise SchemaError(str(path), "file not found")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(str(path), f"invalid JSON: {exc}") from exc


def dump_json(obj) -> str:
    """Canonical JSON text: sorted keys, two-space indent, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def write_text(path, text: str) -> None:
    """Write text with LF endings regardless of platform."""
    Path(path).write_bytes(text.encode("utf-8"))


def require_mapping(value, path: str) -> dict:
    if not isinstance(value, dict):
        raise SchemaError(path, f"expected object, got {type(value).__name__}")
    return value


def require_list(value, path: str) -> list:
    if not isinstance(value, list):
        raise SchemaError(path, f"expected array, got {type(value).__name__}")
    return value


def reject_unknown(mapping: dict, allowed, path: str) -> None:
    unknown = sorted(set(mapping) - set(allowed))
    if unknown:
        raise SchemaError(f"{path}.{unknown[0]}", "unknown key")


def get_required(mapping: dict, key: str, path: str):
    if key not in mapping:
        raise SchemaError(f"{path}.{key}", "missing required field")
    return mapping[key]


def get_str(mapping: dict, key: str, path: str) -> str:
    value = get_required(mapping, key, path)
    if not isinstance(value, str) or not value:
        raise SchemaError(f"{path}.{key}", "expected non-empty string")
    return value


def get_number(mapping: dict, key: str, path: str) -> float:
    value = get_required(mapping, key, path)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"{path}.{key}", "expected number")
    return float(value)


def get_int(mapping: dict, key: str, path: str) -> int:
    value = get_required(mapping, key, path)
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(f"{path}.{key}", "expected integer")
    return value
