"""Line-oriented ``key = value`` text format shared by parameter files,
synthesis reports, and scenario files.

Rules: one ``key = value`` pair per line, ``#`` starts a comment, blank
lines ignored, repeated keys collect into a list (used for schedule
breakpoints). Values stay as raw strings; callers convert.
"""

from __future__ import annotations

import math


class TextFormatError(ValueError):
    """Malformed structured-text input; carries the offending line number."""

    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


def parse_keyvalues(text: str) -> dict[str, list[tuple[str, int]]]:
    """Parse key=value lines into ``{key: [(raw_value, line_no), ...]}``."""
    out: dict[str, list[tuple[str, int]]] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise TextFormatError(f"expected 'key = value', got {raw.strip()!r}", line_no)
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key:
            raise TextFormatError("empty key", line_no)
        out.setdefault(key, []).append((value, line_no))
    return out


def single(fields: dict[str, list[tuple[str, int]]], key: str) -> tuple[str, int]:
    """Return the unique value for ``key``; reject missing or repeated keys."""
    if key not in fields:
        raise TextFormatError(f"missing required key {key!r}")
    entries = fields[key]
    if len(entries) > 1:
        raise TextFormatError(f"key {key!r} given more than once", entries[1][1])
    return entries[0]


def parse_float(raw: str, line_no: int, key: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise TextFormatError(f"{key}: not a number: {raw!r}", line_no) from None
    if not math.isfinite(value):
        raise TextFormatError(f"{key}: must be finite, got {raw}", line_no)
    return value


def parse_floats(raw: str, line_no: int, key: str, count: int | None = None) -> list[float]:
    parts = raw.replace(",", " ").split()
    values = [parse_float(p, line_no, key) for p in parts]
    if count is not None and len(values) != count:
        raise TextFormatError(f"{key}: expected {count} numbers, got {len(values)}", line_no)
    return values


def format_floats(values) -> str:
    return " ".join(f"{float(v):.17g}" for v in values)
