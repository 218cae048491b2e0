"""Deterministic JSON serialization for analysis reports."""

from __future__ import annotations

import hashlib
import math
from enum import Enum

import numpy as np

SCHEMA = 1


def fingerprint(prog):
    """sha256 of the canonical problem text."""
    return hashlib.sha256(prog.canonical_text().encode("utf-8")).hexdigest()


def _float(x):
    x = float(x)
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    if x == 0:
        return "0.0"  # folds -0.0 so that reports do not depend on signed zeros
    text = format(x, ".17g")
    if all(c not in text for c in ".en"):
        text += ".0"
    return text


def _string(s):
    out = ['"']
    for ch in s:
        if ch == '"':
            out.append('\\"')
        elif ch == "\\":
            out.append("\\\\")
        elif ch == "\n":
            out.append("\\n")
        elif ch == "\t":
            out.append("\\t")
        elif ord(ch) < 0x20:
            out.append(f"\\u{ord(ch):04x}")
        else:
            out.append(ch)
    out.append('"')
    return "".join(out)


def to_plain(obj):
    """Convert numpy containers, enums and tuples into JSON-ready values."""
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def dumps(obj, indent=2):
    """JSON text with sorted keys and floats printed with 17 significant digits."""
    return _dump(to_plain(obj), 0, indent) + "\n"


def _dump(obj, level, indent):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        return "null"
    if obj is True:
        return "true"
    if obj is False:
        return "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return _float(obj)
    if isinstance(obj, str):
        return _string(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{_string(k)}: {_dump(obj[k], level + 1, indent)}" for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(_dump(v, level + 1, indent) for v in obj) + "]"
        items = [pad + _dump(v, level + 1, indent) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")
