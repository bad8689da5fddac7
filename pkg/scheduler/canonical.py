"""
Canonical JSON form: sorted keys, no whitespace, integers as integers and
reals with exactly 6 decimal digits. Used for hashing and signing.
"""

import hashlib
import json
import math
from typing import Any

from pydantic import BaseModel


def _encode(value: Any) -> str:
    if isinstance(value, BaseModel):
        return _encode(value.model_dump(mode="json"))
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError(f"non-finite real has no canonical form: {value}")
        return f"{value:.6f}"
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, dict):
        items = sorted((str(k), v) for k, v in value.items())
        return "{" + ",".join(f"{json.dumps(k, ensure_ascii=False)}:{_encode(v)}" for k, v in items) + "}"
    if isinstance(value, (list, tuple)):
        return "[" + ",".join(_encode(v) for v in value) + "]"
    if isinstance(value, (set, frozenset)):
        return _encode(sorted(value))
    raise TypeError(f"cannot canonicalize {type(value).__name__}")


def canonical_json(value: Any) -> str:
    """Render ``value`` (plain data or a pydantic model) in canonical form."""
    return _encode(value)


def content_hash(value: Any, length: int = 16) -> str:
    """sha256 over the canonical form, truncated to ``length`` hex chars."""
    digest = hashlib.sha256(canonical_json(value).encode("utf-8")).hexdigest()
    return digest[:length]
