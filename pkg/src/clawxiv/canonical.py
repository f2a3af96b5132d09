"""Canonical byte encoding shared by manifests, sidecars, and log entries.

Canonical JSON here means: UTF-8, object keys sorted by their UTF-8 bytes,
no insignificant whitespace, arrays in stored order, lowercase hex for
digests (enforced by callers), and minimal JSON string escaping. Equal
values encode to identical bytes.
"""

from __future__ import annotations

import json
import math
import re
from datetime import datetime, timezone

from .errors import ValidationFailure

_HEX64 = re.compile(r"^[0-9a-f]{64}$")
_HEX16 = re.compile(r"^[0-9a-f]{16}$")


def canonical_json_bytes(value) -> bytes:
    """Encode a plain dict/list/str/int/bool structure deterministically."""
    out: list[str] = []
    _write(value, out)
    try:
        return "".join(out).encode("utf-8")
    except UnicodeEncodeError as exc:
        raise ValidationFailure(f"string does not round-trip UTF-8: {exc}") from exc


def _write(value, out: list[str]) -> None:
    if value is True:
        out.append("true")
    elif value is False:
        out.append("false")
    elif isinstance(value, int):
        out.append(str(value))
    elif isinstance(value, float):
        if not math.isfinite(value):
            raise ValidationFailure("non-finite number is not representable")
        out.append(json.dumps(value))
    elif isinstance(value, str):
        out.append(json.dumps(value, ensure_ascii=False))
    elif isinstance(value, list):
        out.append("[")
        for i, item in enumerate(value):
            if i:
                out.append(",")
            _write(item, out)
        out.append("]")
    elif isinstance(value, dict):
        out.append("{")
        keys = list(value.keys())
        if not all(isinstance(k, str) for k in keys):
            raise ValidationFailure("object keys must be strings")
        for i, key in enumerate(sorted(keys, key=lambda k: k.encode("utf-8"))):
            if i:
                out.append(",")
            out.append(json.dumps(key, ensure_ascii=False))
            out.append(":")
            _write(value[key], out)
        out.append("}")
    else:
        raise ValidationFailure(
            f"value of type {type(value).__name__} is not representable"
        )


def is_hex_digest(text) -> bool:
    """True for a 64-char lowercase hex SHA-256 digest."""
    return isinstance(text, str) and bool(_HEX64.match(text))


def is_hex64bit(text) -> bool:
    """True for a 16-char lowercase hex 64-bit value (perceptual hashes)."""
    return isinstance(text, str) and bool(_HEX16.match(text))


def format_timestamp(moment: datetime) -> str:
    """RFC 3339, UTC, whole-second precision: 2026-04-01T12:00:00Z."""
    return moment.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def now_timestamp() -> str:
    return format_timestamp(datetime.now(timezone.utc))


def parse_timestamp(text: str) -> datetime:
    """Parse the RFC 3339 shape emitted by format_timestamp."""
    try:
        parsed = datetime.strptime(text, "%Y-%m-%dT%H:%M:%SZ")
    except (ValueError, TypeError) as exc:
        raise ValidationFailure(f"bad timestamp {text!r}: {exc}") from exc
    return parsed.replace(tzinfo=timezone.utc)
