"""Deterministic export of tables, JSON documents, and meshes.

Numbers are written with repr round-trip formatting and files always use
"\n" line endings, so repeated runs on the same configuration produce
byte-identical artifacts.  Non-finite values become the strings "inf",
"-inf", "nan": JSON has no literals for them, and keeping the same
markers in CSV lets one parser handle both formats.
"""

import json
import math

import numpy as np

__all__ = ["fmt_cell", "write_csv", "sanitize", "write_json", "write_mesh"]


def fmt_cell(value) -> str:
    """One CSV cell.  Floats round-trip through repr; bools lowercase."""
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    return str(value)


def write_csv(path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt_cell(v) for v in row))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def sanitize(obj):
    """Recursive conversion to plain JSON types.

    numpy scalars and arrays become python numbers and lists; non-finite
    floats become their string markers so json.dumps(allow_nan=False)
    never chokes.
    """
    if isinstance(obj, dict):
        return {str(k): sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [sanitize(v) for v in obj.tolist()]
    if isinstance(obj, np.generic):
        return sanitize(obj.item())
    if isinstance(obj, float):
        if math.isnan(obj):
            return "nan"
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    if obj is None or isinstance(obj, (str, int, bool)):
        return obj
    raise TypeError(f"cannot serialize {type(obj).__name__} to JSON")


def write_json(path, document) -> None:
    text = json.dumps(sanitize(document), sort_keys=True, indent=2,
                      allow_nan=False)
    with open(path, "w", newline="\n") as fh:
        fh.write(text + "\n")


def write_mesh(path, vertices, faces) -> None:
    """ASCII mesh: one "v x y z" line per vertex, one "f i j k" line per
    face with 1-based indices.  2D vertices are embedded at z = 0."""
    lines = []
    for v in np.asarray(vertices, float):
        coords = list(v) + [0.0] * max(0, 3 - v.size)
        lines.append("v " + " ".join(fmt_cell(float(c)) for c in coords))
    for f in faces:
        lines.append("f " + " ".join(str(int(i) + 1) for i in f))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
