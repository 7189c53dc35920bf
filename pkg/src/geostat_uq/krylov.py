"""Krylov solvers and B-orthonormal QR used across the package.

Operators are anything :func:`scipy.sparse.linalg.aslinearoperator` accepts
(dense arrays, sparse matrices, ``LinearOperator`` objects).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, aslinearoperator


class ConvergenceError(RuntimeError):
    """An iterative method stopped before reaching its tolerance."""

    def __init__(self, message: str, report: SolveReport | None = None):
        super().__init__(message)
        self.report = report


class RankDeficiencyWarning(UserWarning):
    pass


@dataclass
class SolveReport:
    iterations: int
    residual: float
    converged: bool
    history: list[float] = field(default_factory=list, repr=False)


def as_operator(A) -> LinearOperator:
    if callable(A) and not isinstance(A, LinearOperator) and not hasattr(A, "shape"):
        raise TypeError("bare callables need a shape; wrap them in a LinearOperator")
    return aslinearoperator(A)


def _norm(x) -> float:
    return float(np.linalg.norm(x))


def gmres_restarted(A, b, restart: int = 50, tol: float = 1e-7, maxiter: int = 1000,
                    x0=None, M=None):
    """Restarted GMRES with right preconditioning.

    Parameters
    ----------
    A : operator
        Square system matrix.
    b : ndarray
        Right-hand side.
    restart : int
        Krylov dimension per cycle.
    tol : float
        Target relative residual ``||b - Ax|| / ||b||``.
    maxiter : int
        Cap on the total number of inner iterations.
    x0 : ndarray, optional
        Initial guess.
    M : operator, optional
        Approximate inverse of ``A``, applied on the right.

    Returns
    -------
    x : ndarray
    report : SolveReport
        ``history`` holds the relative residual after every inner iteration.
    """
    if restart < 1:
        raise ValueError("restart must be >= 1")
    if not tol > 0:
        raise ValueError("tol must be positive")
    A = as_operator(A)
    Mop = None if M is None else as_operator(M)
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    bnorm = _norm(b)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0.0:
        return np.zeros(n), SolveReport(0, 0.0, True)

    r = b - A.matvec(x)
    rel = _norm(r) / bnorm
    history: list[float] = []
    total = 0
    while rel > tol and total < maxiter:
        cycle_start = rel
        beta = _norm(r)
        m = min(restart, maxiter - total)
        V = np.zeros((m + 1, n))
        Z = np.zeros((m, n)) if Mop is not None else None
        Hh = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        j_used = 0
        for j in range(m):
            if Mop is not None:
                Z[j] = Mop.matvec(V[j])
                w = A.matvec(Z[j])
            else:
                w = A.matvec(V[j])
            # modified Gram-Schmidt
            for i in range(j + 1):
                Hh[i, j] = V[i] @ w
                w = w - Hh[i, j] * V[i]
            Hh[j + 1, j] = _norm(w)
            breakdown = Hh[j + 1, j] <= 1e-14 * beta
            if not breakdown:
                V[j + 1] = w / Hh[j + 1, j]
            for i in range(j):
                hi, hi1 = Hh[i, j], Hh[i + 1, j]
                Hh[i, j] = cs[i] * hi + sn[i] * hi1
                Hh[i + 1, j] = -sn[i] * hi + cs[i] * hi1
            denom = math.hypot(Hh[j, j], Hh[j + 1, j])
            if denom == 0.0:
                # A maps the new direction into the old span: singular system
                cs[j], sn[j] = 1.0, 0.0
            else:
                cs[j] = Hh[j, j] / denom
                sn[j] = Hh[j + 1, j] / denom
            Hh[j, j] = denom
            Hh[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            total += 1
            j_used = j + 1
            rel = abs(g[j + 1]) / bnorm
            history.append(rel)
            if rel <= tol or breakdown:
                break
        R = np.triu(Hh[:j_used, :j_used])
        if np.all(np.abs(np.diag(R)) > 0):
            y = np.linalg.solve(R, g[:j_used])
        else:
            y = np.linalg.lstsq(R, g[:j_used], rcond=None)[0]
        basis = Z if Mop is not None else V
        x = x + basis[:j_used].T @ y
        r = b - A.matvec(x)
        rel = _norm(r) / bnorm
        if rel > tol and cycle_start - rel < 1e-14 * cycle_start:
            break  # stagnation over a full cycle
    return x, SolveReport(total, rel, rel <= tol, history)


def cg(A, b, tol: float = 1e-8, maxiter: int | None = None, x0=None):
    """Conjugate gradients for symmetric positive definite ``A``.

    Returns ``(x, SolveReport)``. Convergence is judged on the true residual
    ``b - Ax``; if the recursively updated residual has drifted, the
    iteration restarts from the true one.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    A = as_operator(A)
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    maxiter = 10 * n if maxiter is None else maxiter
    bnorm = _norm(b)
    if bnorm == 0.0:
        return np.zeros(n), SolveReport(0, 0.0, True)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    history: list[float] = []
    it = 0
    r = b - A.matvec(x)
    rel = _norm(r) / bnorm
    while rel > tol and it < maxiter:
        p = r.copy()
        rr = r @ r
        while math.sqrt(rr) > tol * bnorm and it < maxiter:
            Ap = A.matvec(p)
            pAp = p @ Ap
            if pAp <= 0:
                raise ValueError("operator is not positive definite")
            alpha = rr / pAp
            x += alpha * p
            r -= alpha * Ap
            rr_new = r @ r
            p = r + (rr_new / rr) * p
            rr = rr_new
            it += 1
            history.append(math.sqrt(rr) / bnorm)
        r = b - A.matvec(x)
        new_rel = _norm(r) / bnorm
        if new_rel > tol and new_rel >= rel:
            rel = new_rel
            break  # no progress from a restart
        rel = new_rel
    return x, SolveReport(it, rel, rel <= tol, history)


def b_orthonormal_qr(Y, B, return_bq: bool = False, warn: bool = True):
    """QR factorization ``Y = Q R`` with ``Q^T B Q = I``.

    Modified Gram-Schmidt in the ``B`` inner product with one full
    reorthogonalization pass. Columns whose B-norm after projection falls
    below ``1e-12`` times their original B-norm are dropped with a
    :class:`RankDeficiencyWarning`; in that case ``Q`` has fewer columns than
    ``Y`` and ``R`` is ``(kept, r)``, so ``Y = Q R`` still holds.

    With ``return_bq=True`` the product ``B Q`` is returned as a third
    value (it is formed anyway). ``warn=False`` suppresses the warning;
    the dropped columns are still visible from the shape of ``Q``.
    """
    B = as_operator(B)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    m, r = Y.shape
    BY = np.asarray(B.matmat(Y))
    col_bnorm = np.sqrt(np.maximum(np.einsum("ij,ij->j", Y, BY), 0.0))

    Q = np.zeros((m, r))
    BQ = np.zeros((m, r))
    R = np.zeros((r, r))
    kept: list[int] = []
    dropped: list[int] = []
    for j in range(r):
        v = Y[:, j].copy()
        q_idx = kept
        for _ in range(2):
            for pos in range(len(q_idx)):
                c = BQ[:, pos] @ v
                R[pos, j] += c
                v -= c * Q[:, pos]
        Bv = B.matvec(v)
        nrm2 = float(v @ Bv)
        nrm = math.sqrt(nrm2) if nrm2 > 0 else 0.0
        if col_bnorm[j] == 0.0 or nrm < 1e-12 * col_bnorm[j]:
            dropped.append(j)
            continue
        pos = len(kept)
        Q[:, pos] = v / nrm
        BQ[:, pos] = Bv / nrm
        R[pos, j] = nrm
        kept.append(j)
    k = len(kept)
    if dropped and warn:
        warnings.warn(f"rank deficiency: dropped columns {dropped}", RankDeficiencyWarning,
                      stacklevel=2)
    Q, BQ, R = Q[:, :k], BQ[:, :k], R[:k, :]
    if return_bq:
        return Q, R, BQ
    return Q, R
