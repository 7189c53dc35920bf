"""CSV output: grid rasters, spectra and criteria tables.

Raster layout: one header line ``nx=..,ny=..,dx=..,dy=..`` followed by
``nx`` rows of ``ny`` comma-separated values (row ``i`` is the x index,
column ``j`` the y index, matching the linear index ``i*ny + j``).
Numbers are written with ``%.17g`` so files round-trip exactly and are
byte-identical for identical inputs.
"""

from __future__ import annotations

import csv
import hashlib
from pathlib import Path

import numpy as np

from .grid import RegularGrid2D

FMT = "%.17g"


def write_raster(path, grid: RegularGrid2D, field) -> Path:
    path = Path(path)
    field = np.asarray(field, dtype=float)
    if field.shape != (grid.m,):
        raise ValueError(f"field has shape {field.shape}, expected ({grid.m},)")
    header = f"nx={grid.nx},ny={grid.ny},dx={grid.dx!r},dy={grid.dy!r}"
    with path.open("w", newline="\n") as fh:
        fh.write(header + "\n")
        for row in field.reshape(grid.nx, grid.ny):
            fh.write(",".join(FMT % v for v in row) + "\n")
    return path


def read_raster(path):
    """Return ``(header dict, field)`` from a raster CSV."""
    with Path(path).open() as fh:
        header = dict(item.split("=") for item in fh.readline().strip().split(","))
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    meta = {"nx": int(header["nx"]), "ny": int(header["ny"]),
            "dx": float(header["dx"]), "dy": float(header["dy"])}
    return meta, data.ravel()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return FMT % v
    return v


def write_table(path, rows: list[dict]) -> Path:
    path = Path(path)
    if not rows:
        raise ValueError("no rows to write")
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})
    return path


def write_spectrum(path, lambdas, cutoff: float) -> Path:
    rows = [{"index": i + 1, "lambda": float(v), "above_cutoff": int(v > cutoff)}
            for i, v in enumerate(lambdas)]
    return write_table(path, rows)


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
