"""Canonical JSON: the one serialized form every hash and stored document uses.

Rules: UTF-8, object keys sorted by code point, no insignificant whitespace,
numbers are base-10 integers only. Floats are rejected so the same document
hashes identically regardless of producer.
"""

from __future__ import annotations

import hashlib
import json
from typing import Any


def _reject_floats(value: Any, path: str) -> None:
    if isinstance(value, bool):
        return
    if isinstance(value, float):
        raise ValueError(f"{path}: floats are not canonical; use integer base units")
    if isinstance(value, dict):
        for k, v in value.items():
            _reject_floats(v, f"{path}.{k}")
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            _reject_floats(v, f"{path}[{i}]")


def dumps(value: Any) -> str:
    """Serialize to the canonical JSON text form."""
    _reject_floats(value, "$")
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def dumps_bytes(value: Any) -> bytes:
    return dumps(value).encode("utf-8")


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def digest(value: Any) -> str:
    """SHA-256 hex digest of the canonical JSON bytes."""
    return sha256_hex(dumps_bytes(value))
