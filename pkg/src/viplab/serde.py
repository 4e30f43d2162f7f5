"""Deterministic serialization helpers: JSON/CSV with exact float round-trips.

All floats are written as decimals with 17 significant digits, which is
lossless for IEEE-754 doubles. The JSON emitter below exists because the
stdlib encoder offers no hook for float formatting; parsing uses stdlib
``json`` (exact for round-trip).
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import numpy as np


def fmt_float(x: float) -> str:
    """Format a finite float with 17 significant digits (round-trip exact)."""
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot serialize non-finite value {x!r}")
    return format(x, ".17g")


def dumps_json(obj, indent: int | None = 2) -> str:
    """Serialize to JSON text with fmt_float applied to every float.

    Dict key order is preserved (callers control it), so output bytes are
    deterministic for a given object.
    """
    out: list[str] = []
    _emit(obj, out, indent, 0)
    out.append("\n")
    return "".join(out)


def _emit(obj, out: list[str], indent: int | None, level: int) -> None:
    nl = "" if indent is None else "\n" + " " * (indent * (level + 1))
    close_nl = "" if indent is None else "\n" + " " * (indent * level)
    if obj is None:
        out.append("null")
    elif isinstance(obj, bool) or isinstance(obj, np.bool_):
        out.append("true" if obj else "false")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(fmt_float(float(obj)))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, np.ndarray):
        _emit(obj.tolist(), out, indent, level)
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{")
        for i, (k, v) in enumerate(obj.items()):
            if not isinstance(k, str):
                raise TypeError(f"JSON object keys must be str, got {type(k).__name__}")
            out.append(("," if i else "") + nl)
            out.append(json.dumps(k) + ": ")
            _emit(v, out, indent, level + 1)
        out.append(close_nl + "}")
    elif isinstance(obj, (list, tuple)):
        if not obj:
            out.append("[]")
            return
        out.append("[")
        for i, v in enumerate(obj):
            out.append(("," if i else "") + nl)
            _emit(v, out, indent, level + 1)
        out.append(close_nl + "]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__} to JSON")


def dump_json(obj, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(dumps_json(obj), encoding="utf-8")
    return path


def load_json(path: str | Path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def csv_cell(value) -> str:
    """Render one CSV cell; floats get the 17-digit treatment."""
    if isinstance(value, (float, np.floating)):
        return fmt_float(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    text = str(value)
    if any(c in text for c in ",\"\n"):
        text = '"' + text.replace('"', '""') + '"'
    return text


def write_csv(path: str | Path, header: list[str], rows) -> Path:
    path = Path(path)
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(csv_cell(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: str | Path) -> str:
    return sha256_bytes(Path(path).read_bytes())


def sha256_array(arr: np.ndarray) -> str:
    """Content hash of a float64 array (shape included)."""
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    h = hashlib.sha256()
    h.update(repr(arr.shape).encode())
    h.update(arr.tobytes())
    return h.hexdigest()
