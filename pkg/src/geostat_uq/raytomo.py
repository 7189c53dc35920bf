"""Straight-ray travel-time tomography.

Each source/receiver pair gives one travel time, the sum over cells of the
slowness times the length of the ray inside the cell.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .grid import RegularGrid2D

_SNAP = 1e-9


@dataclass
class RaySetup:
    sources: np.ndarray
    receivers: np.ndarray
    grid: RegularGrid2D

    def __post_init__(self):
        self.sources = np.atleast_2d(np.asarray(self.sources, dtype=float))
        self.receivers = np.atleast_2d(np.asarray(self.receivers, dtype=float))
        for name in ("sources", "receivers"):
            pts = getattr(self, name)
            if pts.shape[0] < 1 or pts.shape[1] != 2:
                raise ValueError(f"{name} must be a non-empty (k, 2) array")
            xmin, xmax, ymin, ymax = self.grid.bounds
            tol = 1e-12 * max(xmax - xmin, ymax - ymin)
            inside = ((pts[:, 0] >= xmin - tol) & (pts[:, 0] <= xmax + tol)
                      & (pts[:, 1] >= ymin - tol) & (pts[:, 1] <= ymax + tol))
            if not np.all(inside):
                raise ValueError(f"{name} outside the domain {self.grid.bounds}")

    @property
    def n(self) -> int:
        return self.sources.shape[0] * self.receivers.shape[0]

    def pairs(self):
        """Yield ``(source, receiver)`` in source-major order."""
        for s in self.sources:
            for r in self.receivers:
                yield s, r


def _wall_positions(lo: float, width: float, cells: int, count: int, span=(0.0, 1.0)):
    # count equispaced cell centers along the fraction `span` of a wall
    a, b = span
    frac = a + (np.arange(count) + 0.5) * (b - a) / count
    idx = np.minimum(np.floor(frac * cells).astype(int), cells - 1)
    return lo + (idx + 0.5) * width


def standard_setup(grid: RegularGrid2D, n_sou: int = 20, n_rec: int = 50,
                   layout: str = "left_right_walls", sources=None, receivers=None,
                   source_span=(0.0, 1.0), receiver_span=(0.0, 1.0)) -> RaySetup:
    """Cross-well layout: sources on the left wall, receivers on the right.

    Points sit at cell centers of the outermost columns (half a cell in from
    the wall) and are spread evenly along the wall, or along the fraction
    ``source_span`` / ``receiver_span`` of it. With ``layout="custom"``
    the given ``sources`` and ``receivers`` are used as-is.
    """
    if layout == "custom":
        if sources is None or receivers is None:
            raise ValueError("custom layout needs sources and receivers")
        return RaySetup(np.asarray(sources, float), np.asarray(receivers, float), grid)
    if layout != "left_right_walls":
        raise ValueError(f"unknown layout {layout!r}")
    if n_sou < 1 or n_rec < 1:
        raise ValueError("need at least one source and one receiver")
    xmin, xmax, ymin, _ = grid.bounds
    for span in (source_span, receiver_span):
        if not 0.0 <= span[0] < span[1] <= 1.0:
            raise ValueError(f"span {span} must satisfy 0 <= lo < hi <= 1")
    ys = _wall_positions(ymin, grid.dy, grid.ny, n_sou, source_span)
    yr = _wall_positions(ymin, grid.dy, grid.ny, n_rec, receiver_span)
    src = np.column_stack([np.full(n_sou, xmin + 0.5 * grid.dx), ys])
    rec = np.column_stack([np.full(n_rec, xmax - 0.5 * grid.dx), yr])
    return RaySetup(src, rec, grid)


def _snap(u):
    r = np.round(u)
    return np.where(np.abs(u - r) < _SNAP, r, u)


def ray_cells(grid: RegularGrid2D, p0, p1):
    """Cells crossed by segment ``p0 -> p1`` and the length inside each.

    Crossing parameters with every vertical and horizontal grid line are
    merged and sorted; each sub-segment between consecutive crossings lies in
    one cell, found from its midpoint. A sub-segment running exactly along a
    grid line goes to the cell with the larger index.
    """
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    d = p1 - p0
    length = float(np.hypot(*d))
    if length == 0.0:
        raise ValueError("source and receiver coincide (zero-length ray)")
    xmin, xmax, ymin, ymax = grid.bounds

    # clip to the domain box (Liang-Barsky)
    t0, t1 = 0.0, 1.0
    for delta, lo, hi, start in ((d[0], xmin, xmax, p0[0]), (d[1], ymin, ymax, p0[1])):
        if delta == 0.0:
            if start < lo or start > hi:
                return np.zeros(0, dtype=int), np.zeros(0)
            continue
        ta, tb = (lo - start) / delta, (hi - start) / delta
        t0, t1 = max(t0, min(ta, tb)), min(t1, max(ta, tb))
    if t1 <= t0:
        return np.zeros(0, dtype=int), np.zeros(0)

    ts = [np.array([t0, t1])]
    if d[0] != 0.0:
        ts.append((xmin + grid.dx * np.arange(grid.nx + 1) - p0[0]) / d[0])
    if d[1] != 0.0:
        ts.append((ymin + grid.dy * np.arange(grid.ny + 1) - p0[1]) / d[1])
    t = np.concatenate(ts)
    t = np.unique(t[(t >= t0) & (t <= t1)])
    seg = np.diff(t)
    good = seg > 1e-14
    mid = 0.5 * (t[:-1] + t[1:])[good]
    seg = seg[good]

    u = _snap((p0[0] + mid * d[0] - xmin) / grid.dx)
    v = _snap((p0[1] + mid * d[1] - ymin) / grid.dy)
    i = np.clip(np.floor(u).astype(int), 0, grid.nx - 1)
    j = np.clip(np.floor(v).astype(int), 0, grid.ny - 1)
    cells = i * grid.ny + j
    lengths = seg * length
    # merge repeats (only possible after clamping at the far walls)
    cells, inv = np.unique(cells, return_inverse=True)
    return cells, np.bincount(inv, weights=lengths)


def assemble_h(setup: RaySetup) -> sp.csr_matrix:
    """Sparse ``(n, m)`` travel-time operator, rows in source-major order."""
    indptr = [0]
    indices = []
    data = []
    for s, r in setup.pairs():
        cells, lengths = ray_cells(setup.grid, s, r)
        indices.append(cells)
        data.append(lengths)
        indptr.append(indptr[-1] + cells.shape[0])
    indices = np.concatenate(indices) if indices else np.zeros(0, int)
    data = np.concatenate(data) if data else np.zeros(0)
    return sp.csr_matrix((data, indices, np.asarray(indptr)), shape=(setup.n, setup.grid.m))


def forward(H, s):
    """Travel times ``H s``."""
    s = np.asarray(s, dtype=float)
    if s.shape[0] != H.shape[1]:
        raise ValueError(f"field has length {s.shape[0]}, operator expects {H.shape[1]}")
    return H @ s


def read_setup_csv(path, grid: RegularGrid2D) -> RaySetup:
    """Read points from a CSV with columns ``x,y,role`` (role: source|receiver)."""
    src, rec = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            point = (float(row["x"]), float(row["y"]))
            role = row["role"].strip().lower()
            if role == "source":
                src.append(point)
            elif role == "receiver":
                rec.append(point)
            else:
                raise ValueError(f"unknown role {row['role']!r}")
    return RaySetup(np.array(src), np.array(rec), grid)
