"""Serialization helpers.

Floats are always written with 17 significant digits so that every number
re-parses to the identical double.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np


def fmt_float(x: float) -> str:
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def to_plain(obj: Any) -> Any:
    """Recursively convert dataclasses and numpy values into JSON-ready Python objects."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def _encode(obj: Any, indent: int, level: int) -> str:
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
        return fmt_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level) for v in obj) + "]"
        items = [pad + _encode(v, indent, level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj: Any, indent: int = 2) -> str:
    return _encode(to_plain(obj), indent, 0) + "\n"


def loads(text: str) -> Any:
    return json.loads(text)


def write_json(path: Path | str, obj: Any) -> Path:
    path = Path(path)
    path.write_text(dumps(obj))
    return path


def write_csv(path: Path | str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    path.write_text(buf.getvalue())
    return path


def read_matrix(path: Path | str) -> np.ndarray:
    """Read a matrix from row-major CSV (no header) or a JSON array of arrays."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        return np.array(json.loads(text), dtype=float)
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    return np.array([[float(v) for v in r] for r in rows], dtype=float)


def write_matrix(path: Path | str, a: np.ndarray) -> Path:
    path = Path(path)
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if path.suffix.lower() == ".json":
        path.write_text(dumps(a))
    else:
        path.write_text("".join(",".join(fmt_float(v) for v in row) + "\n" for row in a))
    return path


def sha256_file(path: Path | str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
