"""Randomized generalized eigensolver for ``H_red x = lambda Gamma_prior^{-1} x``.

The problem is solved in the transformed form
``Gamma H_red Gamma y = lambda Gamma y`` (so ``x = Gamma y``), which needs
only products with ``H_red`` and ``Gamma``; no inverse or square root of the
prior is ever applied.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .krylov import as_operator, b_orthonormal_qr

log = logging.getLogger(__name__)

DEFAULT_OVERSAMPLING = 20


@dataclass
class GhepProblem:
    """Inputs of the randomized eigensolver.

    ``Hred`` is the data-misfit Hessian (symmetric positive semidefinite) and
    ``B`` the prior covariance (SPD). ``k`` is the number of eigenpairs kept,
    ``p`` the oversampling.
    """

    Hred: object
    B: object
    k: int
    p: int = DEFAULT_OVERSAMPLING
    seed: int = 0

    def __post_init__(self):
        self.Hred = as_operator(self.Hred)
        self.B = as_operator(self.B)
        m = self.B.shape[0]
        if self.Hred.shape != (m, m) or self.B.shape != (m, m):
            raise ValueError(f"operator shapes differ: {self.Hred.shape} vs {self.B.shape}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.p < 0:
            raise ValueError("oversampling must be >= 0")
        if self.k + self.p > m:
            raise ValueError(f"k + p = {self.k + self.p} exceeds dimension m = {m}")

    @property
    def m(self) -> int:
        return self.B.shape[0]


@dataclass
class LowRankEigenpairs:
    """Dominant generalized eigenpairs.

    Attributes
    ----------
    U : ndarray (m, k)
        Eigenvectors of ``H_red x = lambda Gamma^{-1} x``; ``U^T Gamma^{-1} U = I``.
    W : ndarray (m, k)
        ``Gamma^{-1} U`` (the ``Q S`` factor), ``Gamma``-orthonormal.
    lambdas : ndarray (k,)
        Eigenvalues, descending and nonnegative.
    basis : ndarray (m, r)
        The full ``Gamma``-orthonormal range basis ``Q`` (kept for diagnostics).
    b_orthonormality_residual : float
        ``max |W^T Gamma W - I|``.
    gap : float
        Smallest distance between adjacent retained eigenvalues.
    """

    U: np.ndarray
    W: np.ndarray
    lambdas: np.ndarray
    basis: np.ndarray | None = None
    b_orthonormality_residual: float = 0.0
    gap: float = np.inf

    @property
    def k(self) -> int:
        return self.lambdas.shape[0]

    def truncate(self, k: int) -> LowRankEigenpairs:
        k = max(0, min(int(k), self.k))
        return LowRankEigenpairs(self.U[:, :k], self.W[:, :k], self.lambdas[:k], self.basis,
                                 self.b_orthonormality_residual, _gap(self.lambdas[:k]))

    def count_above(self, cutoff: float) -> int:
        return int(np.count_nonzero(self.lambdas > cutoff))


def _gap(lambdas) -> float:
    if len(lambdas) < 2:
        return np.inf
    return float(np.min(np.abs(np.diff(lambdas))))


def gaussian_sketch(m: int, r: int, seed) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((m, r))


def randomized_ghep(problem: GhepProblem, single_pass: bool = False) -> LowRankEigenpairs:
    """Dominant eigenpairs of ``H_red x = lambda Gamma_prior^{-1} x``.

    Two-pass mode forms ``T = (Gamma Q)^T H_red (Gamma Q)`` with a second
    round of ``H_red`` products; single-pass mode reuses the sketch,
    ``T ~ (Omega^T B Q)^+ (Omega^T Ybar) (Q^T B Omega)^+`` with
    ``Ybar = Gamma H_red Gamma Omega``, at no extra operator cost.
    """
    Hred, B = problem.Hred, problem.B
    m, r = problem.m, problem.k + problem.p
    omega = gaussian_sketch(m, r, problem.seed)
    b_omega = np.asarray(B.matmat(omega))
    Y = np.asarray(Hred.matmat(b_omega))
    if not np.any(Y):
        return _zero_result(problem, m)

    # H_red of rank < k + p is routine (few measurements); not worth a warning
    Q, _, BQ = b_orthonormal_qr(Y, B, return_bq=True, warn=False)
    if Q.shape[1] < r:
        log.debug("sketch range has rank %d < %d", Q.shape[1], r)
    if single_pass:
        # Omega^T Ybar = (B Omega)^T Y since B is symmetric
        core = b_omega.T @ Y
        left = omega.T @ BQ
        X = np.linalg.lstsq(left, core, rcond=None)[0]
        T = np.linalg.lstsq(left, X.T, rcond=None)[0].T
    else:
        T = BQ.T @ np.asarray(Hred.matmat(BQ))

    scale = max(np.max(np.abs(T)), np.finfo(float).tiny)
    asym = np.max(np.abs(T - T.T)) / scale
    if asym > 1e-8:
        warnings.warn(f"projected matrix asymmetric ({asym:.2e}); symmetrizing", RuntimeWarning,
                      stacklevel=2)
    T = 0.5 * (T + T.T)
    lam, S = np.linalg.eigh(T)
    order = np.argsort(lam)[::-1][: problem.k]
    lam, S = lam[order], S[:, order]
    lam = np.clip(lam, 0.0, None)

    W = Q @ S
    U = BQ @ S
    gram = W.T @ U
    resid = float(np.max(np.abs(gram - np.eye(gram.shape[0])))) if gram.size else 0.0
    missing = problem.k - lam.shape[0]
    if missing > 0:
        # sketch range smaller than k: the remaining eigenvalues are zero
        lam = np.concatenate([lam, np.zeros(missing)])
        U = np.hstack([U, np.zeros((m, missing))])
        W = np.hstack([W, np.zeros((m, missing))])
    return LowRankEigenpairs(U, W, lam, Q, resid, _gap(lam))


def _zero_result(problem: GhepProblem, m: int) -> LowRankEigenpairs:
    k = problem.k
    return LowRankEigenpairs(np.zeros((m, k)), np.zeros((m, k)), np.zeros(k), np.zeros((m, 0)),
                             0.0, 0.0 if k > 1 else np.inf)


def lowrank_error_estimate(problem: GhepProblem, eigs: LowRankEigenpairs, probes: int = 10,
                           seed=0, power_steps: int = 2) -> float:
    """Probe-based estimate of the low-rank representation error.

    Applies the residual operator ``E = H_red B - W Lambda W^T B`` (the
    error in ``B^{-1} A``) to Gaussian probes, sharpened by ``power_steps``
    rounds of power iteration, and returns the largest ratio
    ``||E v||_B / ||v||_B``. Every ratio is bounded by ``||E||_B``, so the
    result never overshoots the true error.
    """
    if probes < 1:
        raise ValueError("need at least one probe")
    Hred, B = problem.Hred, problem.B
    V = gaussian_sketch(problem.m, probes, seed)
    W, lam = eigs.W, eigs.lambdas

    def residual(X):
        BX = np.asarray(B.matmat(X))
        return np.asarray(Hred.matmat(BX)) - W @ (lam[:, None] * (W.T @ BX)), BX

    for _ in range(power_steps):
        EV, _ = residual(V)
        nrm = np.linalg.norm(EV, axis=0)
        if not np.any(nrm):
            return 0.0
        V = EV / np.where(nrm > 0, nrm, 1.0)
    EV, BV = residual(V)
    BEV = np.asarray(B.matmat(EV))
    num = np.sqrt(np.maximum(np.einsum("ij,ij->j", EV, BEV), 0.0))
    den = np.sqrt(np.maximum(np.einsum("ij,ij->j", V, BV), 0.0))
    ratios = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    return float(ratios.max())
