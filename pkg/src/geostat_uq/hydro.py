"""Steady-state hydraulic tomography on a cell-centered finite-volume grid.

Solves ``-div(K grad phi) = Q delta(x - x_s)`` with ``phi = 0`` on the
boundary and ``K = exp(s)``. Interior faces use the harmonic mean of the two
adjacent conductivities; boundary faces see the Dirichlet value half a cell
away. The point source is lumped into its cell, i.e. a source density of
``Q / (dx dy)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, splu

from .grid import RegularGrid2D
from .krylov import ConvergenceError, cg


@dataclass
class HydroSetup:
    grid: RegularGrid2D
    pumping_locations: np.ndarray
    observation_locations: np.ndarray
    Q: float = 1.0
    solver: str = "direct"
    pumping_cells: np.ndarray = field(init=False)
    observation_cells: np.ndarray = field(init=False)

    def __post_init__(self):
        self.pumping_locations = np.atleast_2d(np.asarray(self.pumping_locations, float))
        self.observation_locations = np.atleast_2d(np.asarray(self.observation_locations, float))
        self.pumping_cells = self.grid.locate(self.pumping_locations)
        self.observation_cells = self.grid.locate(self.observation_locations)
        if len(set(self.pumping_cells.tolist())) != len(self.pumping_cells):
            raise ValueError("pumping locations must map to distinct cells")
        if len(set(self.observation_cells.tolist())) != len(self.observation_cells):
            raise ValueError("observation locations must map to distinct cells")
        if self.solver not in ("direct", "cg"):
            raise ValueError(f"unknown solver {self.solver!r}")

    @property
    def n_sou(self) -> int:
        return self.pumping_cells.shape[0]

    @property
    def n_rec(self) -> int:
        return self.observation_cells.shape[0]

    @property
    def n(self) -> int:
        return self.n_sou * self.n_rec


def _lattice_cells(grid: RegularGrid2D, nsx: int, nsy: int, margin: float) -> np.ndarray:
    xmin, xmax, ymin, ymax = grid.bounds
    xs = np.linspace(xmin + margin * (xmax - xmin), xmax - margin * (xmax - xmin), nsx)
    ys = np.linspace(ymin + margin * (ymax - ymin), ymax - margin * (ymax - ymin), nsy)
    pts = np.array([(x, y) for x in xs for y in ys])
    idx = grid.locate(pts)
    return grid.centers()[idx]


def standard_hydro_setup(grid: RegularGrid2D, sources=(2, 4), observations=(4, 4),
                         Q: float = 1.0, margin: float = 0.2) -> HydroSetup:
    """Pumping wells and observation wells on two interior lattices.

    ``sources`` and ``observations`` are ``(count_x, count_y)``; the lattices
    are inset by ``margin`` (fraction of the domain) from every wall and
    snapped to cell centers.
    """
    src = _lattice_cells(grid, *sources, margin)
    obs = _lattice_cells(grid, *observations, margin * 0.75)
    return HydroSetup(grid, src, obs, Q)


class _Faces:
    """Face connectivity of the grid, computed once per grid."""

    def __init__(self, grid: RegularGrid2D):
        nx, ny = grid.shape
        idx = np.arange(grid.m).reshape(nx, ny)
        wx = grid.dy / grid.dx
        wy = grid.dx / grid.dy
        self.a = np.concatenate([idx[:-1, :].ravel(), idx[:, :-1].ravel()])
        self.b = np.concatenate([idx[1:, :].ravel(), idx[:, 1:].ravel()])
        self.w = np.concatenate([np.full((nx - 1) * ny, wx), np.full(nx * (ny - 1), wy)])
        # boundary faces: cell index and geometric factor (distance dx/2 to the wall)
        bc = [idx[0, :], idx[-1, :], idx[:, 0], idx[:, -1]]
        bw = [np.full(ny, 2 * wx), np.full(ny, 2 * wx), np.full(nx, 2 * wy), np.full(nx, 2 * wy)]
        self.bcell = np.concatenate(bc)
        self.bw = np.concatenate(bw)
        self.m = grid.m


_FACE_CACHE: dict = {}


def _faces(grid: RegularGrid2D) -> _Faces:
    key = (grid.nx, grid.ny, grid.dx, grid.dy)
    if key not in _FACE_CACHE:
        _FACE_CACHE[key] = _Faces(grid)
    return _FACE_CACHE[key]


def _transmissibilities(f: _Faces, s):
    ea, eb = np.exp(-s[f.a]), np.exp(-s[f.b])
    T = 2.0 * f.w / (ea + eb)
    Tb = f.bw * np.exp(s[f.bcell])
    return T, Tb


def assemble_operator(grid: RegularGrid2D, s) -> sp.csr_matrix:
    """Finite-volume system matrix ``A(s)`` (symmetric positive definite)."""
    s = np.asarray(s, dtype=float)
    if s.shape != (grid.m,) or not np.all(np.isfinite(s)):
        raise ValueError("log-transmissivity must be a finite field of length m")
    f = _faces(grid)
    T, Tb = _transmissibilities(f, s)
    diag = np.bincount(f.a, T, f.m) + np.bincount(f.b, T, f.m) + np.bincount(f.bcell, Tb, f.m)
    rows = np.concatenate([f.a, f.b, np.arange(f.m)])
    cols = np.concatenate([f.b, f.a, np.arange(f.m)])
    vals = np.concatenate([-T, -T, diag])
    return sp.csr_matrix((vals, (rows, cols)), shape=(f.m, f.m))


def operator_derivative(grid: RegularGrid2D, s, phi) -> sp.csr_matrix:
    """Sparse ``d(A(s) phi)/ds`` for a fixed head field ``phi``."""
    f = _faces(grid)
    ea, eb = np.exp(-s[f.a]), np.exp(-s[f.b])
    denom = (ea + eb) ** 2
    dT_da = 2.0 * f.w * ea / denom
    dT_db = 2.0 * f.w * eb / denom
    jump = phi[f.a] - phi[f.b]
    Tb = f.bw * np.exp(s[f.bcell])
    # row a gets +dT*jump, row b gets -dT*jump
    rows = np.concatenate([f.a, f.a, f.b, f.b, f.bcell])
    cols = np.concatenate([f.a, f.b, f.a, f.b, f.bcell])
    vals = np.concatenate([dT_da * jump, dT_db * jump, -dT_da * jump, -dT_db * jump,
                           Tb * phi[f.bcell]])
    return sp.csr_matrix((vals, (rows, cols)), shape=(f.m, f.m))


class _Solver:
    def __init__(self, A, method: str):
        self.A = A
        self.method = method
        self._lu = splu(A.tocsc()) if method == "direct" else None

    def __call__(self, b):
        if self._lu is not None:
            return self._lu.solve(b)
        x, report = cg(self.A, b, tol=1e-10, maxiter=20 * self.A.shape[0])
        if not report.converged:
            raise ConvergenceError(f"flow solve stalled at residual {report.residual:.2e}", report)
        return x


def solve_darcy(grid: RegularGrid2D, s, rhs, solver: str = "direct"):
    """Solve ``A(s) phi = rhs`` where ``rhs`` holds cell-integrated sources."""
    A = assemble_operator(grid, s)
    return _Solver(A, solver)(np.asarray(rhs, dtype=float))


def source_vector(setup: HydroSetup, source_index: int) -> np.ndarray:
    if not 0 <= source_index < setup.n_sou:
        raise IndexError(f"source index {source_index} out of range")
    q = np.zeros(setup.grid.m)
    q[setup.pumping_cells[source_index]] = setup.Q
    return q


def solve_flow(setup: HydroSetup, s, source_index: int) -> np.ndarray:
    """Head field for one pumping test."""
    return solve_darcy(setup.grid, s, source_vector(setup, source_index), setup.solver)


class HydroModel:
    """Nonlinear map from log-transmissivity to heads at the observation wells.

    Measurements are ordered source-major: entry ``i*n_rec + j`` is the head
    at observation ``j`` during pumping test ``i``.
    """

    is_linear = False

    def __init__(self, setup: HydroSetup):
        self.setup = setup
        self.shape = (setup.n, setup.grid.m)

    def _state(self, s):
        s = np.asarray(s, dtype=float)
        A = assemble_operator(self.setup.grid, s)
        solve = _Solver(A, self.setup.solver)
        Qmat = np.zeros((self.setup.grid.m, self.setup.n_sou))
        Qmat[self.setup.pumping_cells, np.arange(self.setup.n_sou)] = self.setup.Q
        if solve._lu is not None:
            heads = solve(Qmat)
        else:
            heads = np.column_stack([solve(Qmat[:, i]) for i in range(self.setup.n_sou)])
        return s, solve, heads

    def forward(self, s) -> np.ndarray:
        _, _, heads = self._state(s)
        return heads[self.setup.observation_cells, :].T.ravel()

    def jacobian(self, s) -> HydroJacobian:
        return HydroJacobian(self, *self._state(s))


class HydroJacobian(LinearOperator):
    """Jacobian of :class:`HydroModel` at a fixed field, applied matrix-free.

    ``J v = -P A^{-1} (dA/ds v) phi`` per test; the transpose uses one
    adjoint solve per test (``A`` is symmetric, so the same factorization
    serves both).
    """

    def __init__(self, model: HydroModel, s, solve, heads):
        super().__init__(dtype=np.float64, shape=model.shape)
        self.model = model
        self.s = s
        self.solve = solve
        self.heads = heads
        setup = model.setup
        self._D = [operator_derivative(setup.grid, s, heads[:, i]) for i in range(setup.n_sou)]
        self.value = heads[setup.observation_cells, :].T.ravel()

    def _matvec(self, v):
        v = np.asarray(v, dtype=float).ravel()
        setup = self.model.setup
        rhs = np.column_stack([D @ v for D in self._D])
        dphi = -self._solve_block(rhs)
        return dphi[setup.observation_cells, :].T.ravel()

    def _rmatvec(self, w):
        w = np.asarray(w, dtype=float).ravel()
        setup = self.model.setup
        W = w.reshape(setup.n_sou, setup.n_rec)
        rhs = np.zeros((setup.grid.m, setup.n_sou))
        rhs[setup.observation_cells, :] = W.T
        lam = self._solve_block(rhs)
        out = np.zeros(setup.grid.m)
        for i, D in enumerate(self._D):
            out -= D.T @ lam[:, i]
        return out

    def _solve_block(self, rhs):
        if self.solve._lu is not None:
            return self.solve(rhs)
        return np.column_stack([self.solve(rhs[:, i]) for i in range(rhs.shape[1])])


def jacobian_matvec(setup: HydroSetup, s, v):
    return HydroModel(setup).jacobian(s).matvec(v)


def jacobian_rmatvec(setup: HydroSetup, s, w):
    return HydroModel(setup).jacobian(s).rmatvec(w)


def measure(setup: HydroSetup, s) -> np.ndarray:
    return HydroModel(setup).forward(s)
