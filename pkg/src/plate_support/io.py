"""Plain-text and JSON artifacts for runs: field dumps, CSV tables, records.

Everything is deterministic byte for byte for a fixed input: floats are
written with repr-faithful %.17g, rows follow fixed orderings, and JSON is
dumped with sorted keys.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .grid import Grid2D, ScalarField2D

__all__ = [
    "fmt",
    "write_field_matrix",
    "write_field_csv",
    "write_csv",
    "write_json",
    "content_hash",
    "write_plate3d",
    "read_plate3d",
]

PLATE3D_MAGIC = b"PLT3"


def fmt(x) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def write_field_matrix(field: ScalarField2D, path) -> None:
    """One text row per y-line, top line = largest y (visual orientation)."""
    m = field.as_matrix()
    lines = [" ".join(fmt(v) for v in row) for row in m[::-1]]
    Path(path).write_text("\n".join(lines) + "\n")


def write_field_csv(field: ScalarField2D, path) -> None:
    g = field.grid
    c = g.coords
    lines = ["x,y,value"]
    for k in range(g.n_nodes):
        lines.append(f"{fmt(c[k, 0])},{fmt(c[k, 1])},{fmt(field.values[k])}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_csv(path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        if isinstance(row, dict):
            row = [row[h] for h in header]
        lines.append(",".join(fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, frozenset):
        return sorted(obj)
    return obj


def write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")


def content_hash(payload, *file_paths) -> str:
    """SHA-256 over the canonical JSON of a payload plus referenced files."""
    h = hashlib.sha256()
    h.update(json.dumps(_jsonable(payload), sort_keys=True).encode())
    for p in file_paths:
        h.update(Path(p).read_bytes())
    return h.hexdigest()


def write_plate3d(y: np.ndarray, path) -> None:
    """Binary dump: 16-byte header (magic, nx, ny, nz as uint32) then the
    float64 deformation in C order with layout (nz, ny, nx, 3)."""
    nz, ny, nx, three = y.shape
    if three != 3:
        raise ValueError("expected a (nz, ny, nx, 3) deformation array")
    with open(path, "wb") as fh:
        fh.write(PLATE3D_MAGIC)
        fh.write(np.array([nx, ny, nz], dtype="<u4").tobytes())
        fh.write(np.ascontiguousarray(y, dtype="<f8").tobytes())


def read_plate3d(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != PLATE3D_MAGIC:
        raise ValueError("not a plate deformation dump")
    nx, ny, nz = np.frombuffer(raw[4:16], dtype="<u4")
    y = np.frombuffer(raw[16:], dtype="<f8").reshape(int(nz), int(ny), int(nx), 3)
    return y.copy()
