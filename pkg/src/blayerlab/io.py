"""Snapshot formats shared by the marching and steady solvers.

A field block is:  two ASCII header lines, then raw bytes.

    PRANDTL-LAB/1 field
    <nx> <ny>
    <nx*ny float64 little-endian values, row-major>

Multi-field snapshots are a directory holding one block per field plus a
manifest.json naming each block.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .errors import ShapeError

MAGIC = b"PRANDTL-LAB/1 field\n"


def write_field(path, values: np.ndarray) -> None:
    values = np.asarray(values, dtype="<f8")
    if values.ndim != 2:
        raise ShapeError("field blocks are 2D (nx, ny) arrays")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(f"{values.shape[0]} {values.shape[1]}\n".encode("ascii"))
        fh.write(values.tobytes(order="C"))


def read_field(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.readline()
        if magic != MAGIC:
            raise ShapeError(f"bad field header in {path!s}")
        nx, ny = (int(t) for t in fh.readline().split())
        data = np.frombuffer(fh.read(8 * nx * ny), dtype="<f8")
        if data.size != nx * ny:
            raise ShapeError(f"truncated field block in {path!s}")
        return data.reshape(nx, ny).copy()


def write_snapshot(directory, fields: dict, meta: dict | None = None) -> None:
    """Write one block per field plus a manifest naming each block."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"format": "PRANDTL-LAB/1", "fields": [], "meta": meta or {}}
    for name in sorted(fields):
        arr = np.atleast_2d(np.asarray(fields[name], float))
        fname = f"{name}.bin"
        write_field(directory / fname, arr)
        manifest["fields"].append(
            {"name": name, "file": fname, "nx": arr.shape[0], "ny": arr.shape[1]})
    with open(directory / "manifest.json", "w", encoding="ascii") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_snapshot(directory) -> dict:
    directory = Path(directory)
    with open(directory / "manifest.json", "r", encoding="ascii") as fh:
        manifest = json.load(fh)
    return {entry["name"]: read_field(directory / entry["file"])
            for entry in manifest["fields"]}


def write_csv(path, header: str, rows) -> None:
    """One-line header then comma-separated rows, deterministic bytes."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(header.rstrip("\n") + "\n")
        for row in rows:
            fh.write(",".join(f"{v:.17g}" if isinstance(v, float) else str(v)
                              for v in row) + "\n")


def json_17g(obj) -> str:
    """Deterministic JSON with floats at 17 significant digits."""

    def convert(v):
        if isinstance(v, dict):
            return {k: convert(v[k]) for k in v}
        if isinstance(v, (list, tuple)):
            return [convert(t) for t in v]
        if isinstance(v, (float, np.floating)):
            return float(f"{float(v):.17g}")
        if isinstance(v, (np.integer,)):
            return int(v)
        if isinstance(v, np.bool_):
            return bool(v)
        return v

    return json.dumps(convert(obj), indent=1, sort_keys=True) + "\n"
