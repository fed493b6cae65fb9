"""Access to the embedded versioned schema documents."""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources
from typing import Any

import jsonschema


@lru_cache(maxsize=None)
def load_schema(name: str, version: str = "v1") -> dict[str, Any]:
    ref = resources.files("mosaic.schemas").joinpath(version, f"{name}.json")
    return json.loads(ref.read_text("utf-8"))


@lru_cache(maxsize=None)
def validator(name: str, version: str = "v1") -> jsonschema.Draft202012Validator:
    return jsonschema.Draft202012Validator(load_schema(name, version))


def validation_errors(name: str, doc: Any, version: str = "v1") -> list[str]:
    """Human-readable field-path diagnostics, empty when the document is valid."""
    out = []
    for err in sorted(validator(name, version).iter_errors(doc), key=lambda e: list(e.path)):
        path = "/".join(str(p) for p in err.path) or "<root>"
        out.append(f"{path}: {err.message}")
    return out
