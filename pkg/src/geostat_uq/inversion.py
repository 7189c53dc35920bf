"""MAP estimation in the geostatistical (xi-beta) formulation.

The field is written as ``s = X beta + Gamma eta``. For a linear model the MAP
point solves the saddle system

    [[H Gamma H^T + R, H X], [(H X)^T, 0]] [xi; beta] = [y; 0]

with ``eta = H^T xi``. The nonlinear case repeats this with the Jacobian at
the current iterate (quasi-linear Gauss-Newton). Keeping ``eta`` alongside
``s`` makes the prior misfit ``eta^T Gamma eta`` available without ever
applying ``Gamma^{-1}``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lu_factor, lu_solve
from scipy.sparse.linalg import LinearOperator, aslinearoperator

from .krylov import ConvergenceError, SolveReport, gmres_restarted
from .randeig import GhepProblem, randomized_ghep

log = logging.getLogger(__name__)

GMRES_RESTART = 50
GMRES_TOL = 1e-7


class LinearModel:
    """Linear measurement operator ``h(s) = H s``."""

    is_linear = True

    def __init__(self, H):
        self.H = H
        self.shape = H.shape

    def forward(self, s):
        return np.asarray(self.H @ s).ravel()

    def jacobian(self, s=None):
        return aslinearoperator(self.H)


@dataclass
class InverseProblem:
    """Prior, drift, noise variances, measurement model and data."""

    prior: LinearOperator
    X: np.ndarray
    noise_var: np.ndarray
    model: object
    y: np.ndarray

    def __post_init__(self):
        m = self.prior.shape[0]
        self.X = np.zeros((m, 0)) if self.X is None else np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        self.y = np.asarray(self.y, dtype=float).ravel()
        n = self.y.shape[0]
        self.noise_var = np.broadcast_to(np.asarray(self.noise_var, dtype=float), (n,)).copy()
        if np.any(self.noise_var <= 0):
            raise ValueError("noise variances must be positive")
        if self.X.shape[0] != m:
            raise ValueError("drift matrix rows do not match the prior dimension")
        if tuple(self.model.shape) != (n, m):
            raise ValueError(f"model shape {self.model.shape} does not match ({n}, {m})")

    @property
    def m(self) -> int:
        return self.prior.shape[0]

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def n_p(self) -> int:
        return self.X.shape[1]

    def objective(self, s, eta, hs=None) -> tuple[float, float]:
        """Data and prior misfit halves of the negative log posterior."""
        hs = self.model.forward(s) if hs is None else hs
        r = self.y - hs
        data = 0.5 * float(r @ (r / self.noise_var))
        prior = 0.5 * float(eta @ self.prior.matvec(eta))
        return data, prior


@dataclass
class MapResult:
    s_hat: np.ndarray
    beta_hat: np.ndarray
    xi_hat: np.ndarray
    eta_hat: np.ndarray
    gn_iterations: int = 1
    solve_reports: list[SolveReport] = field(default_factory=list)
    data_misfit: float = 0.0
    prior_misfit: float = 0.0
    objective_history: list[float] = field(default_factory=list)
    converged: bool = True

    @property
    def objective(self) -> float:
        return self.data_misfit + self.prior_misfit


def saddle_operator(prior, J, X, noise_var) -> LinearOperator:
    """Matrix-free ``[[J Gamma J^T + R, J X], [(J X)^T, 0]]``."""
    J = aslinearoperator(J)
    n = J.shape[0]
    JX = np.asarray(J.matmat(X)) if X.shape[1] else np.zeros((n, 0))
    n_p = JX.shape[1]

    def mv(z):
        z = np.ravel(z)
        xi, beta = z[:n], z[n:]
        top = J.matvec(prior.matvec(J.rmatvec(xi))) + noise_var * xi + JX @ beta
        return np.concatenate([top, JX.T @ xi])

    op = LinearOperator((n + n_p, n + n_p), matvec=mv, rmatvec=mv, dtype=np.float64)
    op.JX = JX
    return op


def lowrank_saddle_preconditioner(prior, J, X, noise_var, rank: int = 150, p: int = 20,
                                  seed: int = 0):
    """Approximate inverse of the saddle matrix from a low-rank prior.

    ``Gamma ~ V Lambda V^T`` from the randomized eigensolver with ``B = I``;
    the resulting dense ``(n + n_p)`` saddle matrix is LU-factorized once.
    """
    J = aslinearoperator(J)
    m = prior.shape[0]
    rank = min(rank, m - p)
    eigs = randomized_ghep(GhepProblem(prior, sp.identity(m, format="csr"), rank, p, seed))
    V = eigs.U * np.sqrt(eigs.lambdas)
    JV = np.asarray(J.matmat(V))
    n = J.shape[0]
    JX = np.asarray(J.matmat(X)) if X.shape[1] else np.zeros((n, 0))
    n_p = JX.shape[1]
    K = np.zeros((n + n_p, n + n_p))
    K[:n, :n] = JV @ JV.T + np.diag(noise_var)
    K[:n, n:] = JX
    K[n:, :n] = JX.T
    lu = lu_factor(K)
    return LinearOperator(K.shape, matvec=lambda z: lu_solve(lu, np.ravel(z)), dtype=np.float64)


def _solve_saddle(problem: InverseProblem, J, rhs, tol, restart, maxiter, preconditioner):
    op = saddle_operator(problem.prior, J, problem.X, problem.noise_var)
    if problem.n_p and np.linalg.matrix_rank(op.JX) < problem.n_p:
        raise ValueError("H X is rank deficient; drift coefficients are not identifiable")
    M = None
    if preconditioner is not None:
        M = preconditioner(problem.prior, J, problem.X, problem.noise_var)
    z, report = gmres_restarted(op, rhs, restart=restart, tol=tol, maxiter=maxiter, M=M)
    if not report.converged:
        raise ConvergenceError(
            f"GMRES stopped at relative residual {report.residual:.3e} after "
            f"{report.iterations} iterations", report)
    return z[: problem.n], z[problem.n:], report


def solve_linear_map(problem: InverseProblem, tol: float = GMRES_TOL,
                     restart: int = GMRES_RESTART, maxiter: int = 5000,
                     preconditioner=None) -> MapResult:
    """MAP estimate for a linear model from the xi-beta saddle system."""
    if not getattr(problem.model, "is_linear", False):
        raise ValueError("solve_linear_map needs a linear model")
    J = problem.model.jacobian()
    rhs = np.concatenate([problem.y, np.zeros(problem.n_p)])
    xi, beta, report = _solve_saddle(problem, J, rhs, tol, restart, maxiter, preconditioner)
    eta = J.rmatvec(xi)
    s_hat = problem.X @ beta + problem.prior.matvec(eta)
    data, prior = problem.objective(s_hat, eta)
    return MapResult(s_hat, beta, xi, eta, 1, [report], data, prior, [data + prior])


def solve_quasilinear_map(problem: InverseProblem, max_gn: int = 20, step_tol: float = 1e-3,
                          line_search: bool = True, s0=None, beta0=None,
                          tol: float = GMRES_TOL, restart: int = GMRES_RESTART,
                          maxiter: int = 5000, preconditioner=None,
                          max_backtracks: int = 10) -> MapResult:
    """Quasi-linear Gauss-Newton MAP estimate.

    Each iteration solves the saddle system with the Jacobian ``J_k`` at
    ``s_k`` and right-hand side ``y - h(s_k) + J_k s_k``, then sets
    ``s = X beta + Gamma J_k^T xi``. Iteration stops when the relative step
    ``||s_{k+1} - s_k|| / ||s_k||`` drops below ``step_tol``. With
    ``line_search`` the step is halved (at most ``max_backtracks`` times)
    until the objective decreases.

    The starting point is ``s0`` (default ``X beta0``, or zero); an ``s0``
    outside the drift span costs one prior solve to recover ``eta``.
    """
    X, prior = problem.X, problem.prior
    beta = np.zeros(problem.n_p) if beta0 is None else np.asarray(beta0, float).ravel()
    if s0 is None:
        s = X @ beta
        eta = np.zeros(problem.m)
    else:
        s = np.asarray(s0, dtype=float).ravel().copy()
        resid = s - X @ beta
        eta = np.zeros(problem.m) if not np.any(resid) else prior.apply_inverse(resid)

    hs = problem.model.forward(s)
    f = sum(problem.objective(s, eta, hs))
    history = [f]
    reports = []
    converged = False
    it = 0
    xi = np.zeros(problem.n)
    for it in range(1, max_gn + 1):
        J = problem.model.jacobian(s)
        rhs = np.concatenate([problem.y - hs + J.matvec(s), np.zeros(problem.n_p)])
        xi, beta_new, report = _solve_saddle(problem, J, rhs, tol, restart, maxiter,
                                             preconditioner)
        reports.append(report)
        eta_new = J.rmatvec(xi)
        s_new = X @ beta_new + prior.matvec(eta_new)

        if problem.model.is_linear:
            # constant Jacobian: one Gauss-Newton step is exact
            s, beta, eta = s_new, beta_new, eta_new
            hs = problem.model.forward(s)
            history.append(sum(problem.objective(s, eta, hs)))
            converged = True
            break

        step = 1.0
        ds, db, de = s_new - s, beta_new - beta, eta_new - eta
        for trial in range(max_backtracks + 1):
            s_try = s + step * ds
            eta_try = eta + step * de
            hs_try = problem.model.forward(s_try)
            f_try = sum(problem.objective(s_try, eta_try, hs_try))
            if not line_search or f_try <= f or trial == max_backtracks:
                break
            step *= 0.5
        if f_try > f:
            if line_search:
                log.warning("line search failed to decrease the objective at iteration %d", it)
            else:
                warnings.warn(f"objective increased at Gauss-Newton iteration {it} "
                              f"({f:.6e} -> {f_try:.6e})", RuntimeWarning, stacklevel=2)
            if line_search:
                converged = False
                break
        s_norm = np.linalg.norm(s)
        step_norm = np.linalg.norm(s_try - s)
        # from a zero start the relative step is undefined; never stop there
        rel_step = step_norm / s_norm if s_norm > 0 else (0.0 if step_norm == 0 else np.inf)
        s, beta, eta, hs, f = s_try, beta + step * db, eta_try, hs_try, f_try
        history.append(f)
        log.info("GN %d: objective %.6e, relative step %.3e, GMRES its %d",
                 it, f, rel_step, report.iterations)
        if rel_step < step_tol:
            converged = True
            break

    data, prior_part = problem.objective(s, eta, hs)
    return MapResult(s, beta, xi, eta, it, reports, data, prior_part, history, converged)
