"""Regular grids and Matérn covariance kernels."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import kv


@dataclass(frozen=True)
class RegularGrid2D:
    """Uniform cell-centered lattice.

    Cell ``(i, j)`` has center ``origin + (i*dx, j*dy)``; ``i`` runs along x
    and ``j`` along y. Fields are stored flat in row-major order with ``j``
    varying fastest, so ``index = i*ny + j`` and ``field.reshape(nx, ny)``
    recovers the 2-D layout.
    """

    nx: int
    ny: int
    dx: float = 1.0
    dy: float = 1.0
    origin: tuple[float, float] = (0.5, 0.5)

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny:
            raise ValueError("nx and ny must be integers")
        if self.nx < 1 or self.ny < 1:
            raise ValueError(f"grid needs nx, ny >= 1, got {self.nx}x{self.ny}")
        if not (self.dx > 0 and self.dy > 0):
            raise ValueError("cell widths must be positive")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @classmethod
    def unit_square(cls, nx: int, ny: int | None = None, size: float = 1.0) -> RegularGrid2D:
        """Grid covering ``[0, size]^2`` with ``nx x ny`` cells."""
        ny = nx if ny is None else ny
        dx, dy = size / nx, size / ny
        return cls(nx, ny, dx, dy, (0.5 * dx, 0.5 * dy))

    @property
    def m(self) -> int:
        return self.nx * self.ny

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """Domain extent ``(xmin, xmax, ymin, ymax)`` measured at cell edges."""
        x0 = self.origin[0] - 0.5 * self.dx
        y0 = self.origin[1] - 0.5 * self.dy
        return (x0, x0 + self.nx * self.dx, y0, y0 + self.ny * self.dy)

    def index(self, i, j):
        i = np.asarray(i)
        j = np.asarray(j)
        if np.any((i < 0) | (i >= self.nx) | (j < 0) | (j >= self.ny)):
            raise IndexError("cell index out of range")
        return i * self.ny + j

    def unravel(self, index):
        index = np.asarray(index)
        if np.any((index < 0) | (index >= self.m)):
            raise IndexError("linear index out of range")
        return np.divmod(index, self.ny)

    def centers(self) -> np.ndarray:
        """(m, 2) array of cell-center coordinates in linear-index order."""
        x = self.origin[0] + self.dx * np.arange(self.nx)
        y = self.origin[1] + self.dy * np.arange(self.ny)
        xx, yy = np.meshgrid(x, y, indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel()])

    def locate(self, points) -> np.ndarray:
        """Linear index of the cell containing each point (clamped to the grid)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        xmin, _, ymin, _ = self.bounds
        i = np.clip(np.floor((points[:, 0] - xmin) / self.dx).astype(int), 0, self.nx - 1)
        j = np.clip(np.floor((points[:, 1] - ymin) / self.dy).astype(int), 0, self.ny - 1)
        return i * self.ny + j


_CLOSED_FORMS = (0.5, 1.5, 2.5)


@dataclass(frozen=True)
class MaternKernel:
    """Stationary isotropic Matérn covariance.

    ``theta`` is the variance (value at zero distance) and ``L`` the
    correlation length. The general Bessel form uses scaling ``alpha = 1/L``
    so that it coincides with the closed forms for nu in {1/2, 3/2, 5/2}.
    """

    nu: float = 0.5
    theta: float = 1.0
    L: float = 1.0

    def __post_init__(self):
        for name in ("nu", "theta", "L"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")

    @property
    def alpha(self) -> float:
        return 1.0 / self.L

    def __call__(self, r):
        return kernel_eval(self, r)


def matern_bessel(r, nu: float, theta: float = 1.0, alpha: float = 1.0):
    """Matérn covariance from the modified Bessel function of the second kind.

    Evaluated as ``theta * 2^(1-nu)/Gamma(nu) * z^nu * K_nu(z)`` with
    ``z = sqrt(2 nu) * alpha * r``; the removable singularity at ``r = 0``
    is filled with ``theta``.
    """
    r = np.asarray(r, dtype=float)
    z = math.sqrt(2.0 * nu) * alpha * r
    out = np.full(z.shape, float(theta))
    pos = z > 0
    zp = z[pos]
    with np.errstate(under="ignore"):
        out[pos] = theta * (2.0 ** (1.0 - nu) / gamma_fn(nu)) * zp**nu * kv(nu, zp)
    # kv underflows to 0 for very large z; nan can appear from inf*0
    out[~np.isfinite(out)] = 0.0
    return out if out.ndim else float(out)


def kernel_eval(kernel: MaternKernel, r):
    """Covariance value at distance ``r`` (scalar or array)."""
    r = np.asarray(r, dtype=float)
    if not np.all(np.isfinite(r)):
        raise ValueError("distance must be finite")
    if np.any(r < 0):
        raise ValueError("distance must be non-negative")
    t = r / kernel.L
    nu, theta = kernel.nu, kernel.theta
    if nu == 0.5:
        out = theta * np.exp(-t)
    elif nu == 1.5:
        a = math.sqrt(3.0) * t
        out = theta * (1.0 + a) * np.exp(-a)
    elif nu == 2.5:
        a = math.sqrt(5.0) * t
        out = theta * (1.0 + a + 5.0 * t**2 / 3.0) * np.exp(-a)
    else:
        return matern_bessel(r, nu, theta, kernel.alpha)
    return out if out.ndim else float(out)


def kernel_row(kernel: MaternKernel, grid: RegularGrid2D, point_index: int) -> np.ndarray:
    """Row ``point_index`` of the prior covariance matrix on ``grid``."""
    if not 0 <= point_index < grid.m:
        raise IndexError(f"point index {point_index} out of range for m={grid.m}")
    i, j = divmod(int(point_index), grid.ny)
    ii = np.arange(grid.nx)[:, None]
    jj = np.arange(grid.ny)[None, :]
    r = np.hypot((ii - i) * grid.dx, (jj - j) * grid.dy)
    return np.asarray(kernel_eval(kernel, r)).ravel()


def lag_distances(grid: RegularGrid2D, pad_x: int, pad_y: int) -> np.ndarray:
    """Periodic lag distances on a ``pad_x x pad_y`` torus with the grid spacing."""
    a = np.arange(pad_x)
    b = np.arange(pad_y)
    lx = np.minimum(a, pad_x - a) * grid.dx
    ly = np.minimum(b, pad_y - b) * grid.dy
    return np.hypot(lx[:, None], ly[None, :])
