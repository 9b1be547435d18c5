"""Bit-exact field files.

1D fields are CSV (``x,u``) preceded by one ``# grid:`` comment line holding
the grid as JSON; floats are written with ``repr`` so reading them back gives
the same doubles.  2D fields are a raw little-endian float64 file in row-major
(x-major) order plus a JSON sidecar at ``<path>.json``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .grid import Axis, Field, GridSpec

GRID_PREFIX = "# grid: "
SIDECAR_KEYS = ("shape", "bounds", "periodic", "axis_order", "dtype")


class FieldFormatError(ValueError):
    """A field file or its sidecar does not describe a valid field."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def _grid_json(grid: GridSpec) -> str:
    return json.dumps(grid.to_dict(), sort_keys=True)


def write_field(f: Field, path: str | Path) -> Path:
    path = Path(path)
    if f.grid.dim == 1:
        lines = [GRID_PREFIX + _grid_json(f.grid), "x,u"]
        lines += [f"{x!r},{u!r}" for x, u in zip(f.grid.x.tolist(), f.values.tolist())]
        with open(path, "w", newline="\n", encoding="ascii") as fh:
            fh.write("\n".join(lines) + "\n")
        return path
    data = np.ascontiguousarray(f.values, dtype="<f8")
    path.write_bytes(data.tobytes(order="C"))
    meta = {
        "shape": list(f.grid.shape),
        "bounds": [[ax.lower, ax.upper] for ax in f.grid.axes],
        "periodic": [ax.periodic for ax in f.grid.axes],
        "axis_order": "x-major",
        "dtype": "<f8",
    }
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="ascii")
    return path


def _read_csv(path: Path, periodic: bool | None) -> Field:
    text = path.read_text(encoding="ascii")
    lines = text.split("\n")
    grid = None
    if lines and lines[0].startswith(GRID_PREFIX):
        grid = GridSpec.from_dict(json.loads(lines[0][len(GRID_PREFIX):]))
        lines = lines[1:]
    if not lines or lines[0].strip() != "x,u":
        raise FieldFormatError(f"{path}: expected header 'x,u'", "header")
    rows = [ln.split(",") for ln in lines[1:] if ln]
    try:
        x = np.array([float(r[0]) for r in rows])
        u = np.array([float(r[1]) for r in rows])
    except (IndexError, ValueError) as exc:
        raise FieldFormatError(f"{path}: malformed row ({exc})", "rows") from exc
    if grid is None:
        if x.size < 3:
            raise FieldFormatError(f"{path}: need at least 3 rows", "rows")
        grid = GridSpec((Axis(x.size, float(x[0]), float(x[-1]), bool(periodic)),))
    if grid.shape != (x.size,):
        raise FieldFormatError(f"{path}: {x.size} rows but grid has {grid.shape[0]} nodes", "shape")
    if not np.array_equal(x, grid.x):
        raise FieldFormatError(f"{path}: x column does not match the grid nodes", "x")
    return Field(grid, u)


def _read_raw(path: Path) -> Field:
    side = sidecar_path(path)
    if not side.exists():
        raise FieldFormatError(f"missing sidecar {side}", "sidecar")
    try:
        meta = json.loads(side.read_text(encoding="ascii"))
    except json.JSONDecodeError as exc:
        raise FieldFormatError(f"{side}: invalid JSON ({exc})", "sidecar") from exc
    if not isinstance(meta, dict):
        raise FieldFormatError(f"{side}: sidecar must be a JSON object", "sidecar")
    for key in SIDECAR_KEYS:
        if key not in meta:
            raise FieldFormatError(f"{side}: missing key '{key}'", key)
    if meta["dtype"] != "<f8":
        raise FieldFormatError(f"{side}: unsupported dtype {meta['dtype']!r}", "dtype")
    if meta["axis_order"] != "x-major":
        raise FieldFormatError(f"{side}: unsupported axis_order {meta['axis_order']!r}", "axis_order")
    shape, bounds, periodic = meta["shape"], meta["bounds"], meta["periodic"]
    if not (isinstance(shape, list) and len(shape) == 2 and all(isinstance(n, int) for n in shape)):
        raise FieldFormatError(f"{side}: shape must be two integers", "shape")
    if not (isinstance(bounds, list) and len(bounds) == 2 and all(len(b) == 2 for b in bounds)):
        raise FieldFormatError(f"{side}: bounds must be two [lower, upper] pairs", "bounds")
    if not (isinstance(periodic, list) and len(periodic) == 2):
        raise FieldFormatError(f"{side}: periodic must list two flags", "periodic")
    try:
        grid = GridSpec(tuple(Axis(n, float(lo), float(hi), bool(p)) for n, (lo, hi), p in zip(shape, bounds, periodic)))
    except ValueError as exc:
        raise FieldFormatError(f"{side}: {exc}", "bounds") from exc
    raw = path.read_bytes()
    if len(raw) != 8 * grid.size:
        raise FieldFormatError(f"{path}: {len(raw)} bytes but shape {tuple(shape)} needs {8 * grid.size}", "shape")
    return Field(grid, np.frombuffer(raw, dtype="<f8").reshape(grid.shape).astype(float))


def read_field(path: str | Path, periodic: bool | None = None) -> Field:
    """Inverse of ``write_field``.

    A CSV without the grid comment is read as a truncated axis unless
    ``periodic`` says otherwise.
    """
    path = Path(path)
    if sidecar_path(path).exists() or path.suffix != ".csv":
        return _read_raw(path)
    return _read_csv(path, periodic)
