"""Low-rank posterior covariance with drift blocks.

``F_ss^{-1} ~ Gamma_prior - U_k D_k U_k^T`` with ``D_k = diag(lambda/(1+lambda))``,
combined with the drift coefficients ``beta`` through the 2x2 block inverse

    Gamma_post = [[F_ss^{-1} + G S^{-1} G^T, -G S^{-1}],
                  [-S^{-1} G^T,               S^{-1}   ]]

where ``F_sb = Gamma^{-1} X``, ``G = F_ss^{-1} F_sb`` and
``S = X^T Gamma^{-1} X - F_sb^T G`` is the Schur complement.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .prior import PriorOperator
from .randeig import LowRankEigenpairs

DEFAULT_CUTOFF = 0.1


class PosteriorError(ValueError):
    pass


@dataclass
class PosteriorRepresentation:
    prior: PriorOperator
    eigs: LowRankEigenpairs
    Dk: np.ndarray
    X: np.ndarray
    G: np.ndarray
    schur: np.ndarray
    schur_inv: np.ndarray
    cutoff: float
    schur_logdet: float = 0.0

    @property
    def m(self) -> int:
        return self.prior.shape[0]

    @property
    def n_p(self) -> int:
        return self.X.shape[1]

    @property
    def k(self) -> int:
        return self.Dk.shape[0]

    @property
    def U(self) -> np.ndarray:
        return self.eigs.U


def build_posterior(prior, eigs: LowRankEigenpairs, X=None, cutoff: float = DEFAULT_CUTOFF,
                    rank: int | None = None) -> PosteriorRepresentation:
    """Assemble the posterior representation from generalized eigenpairs.

    Eigenpairs with ``lambda <= cutoff`` are discarded; ``rank`` optionally
    caps how many of the leading pairs are used before the cutoff is applied.

    The drift blocks use ``W = Gamma^{-1} U`` carried by the eigensolver:
    ``G = X - U D (W^T X)`` and ``S = (W^T X)^T D (W^T X)``, which are the
    block formulas with ``Gamma^{-1} X`` cancelled analytically, so no prior
    solves are needed.
    """
    m = prior.shape[0]
    X = np.zeros((m, 0)) if X is None else np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != m:
        raise ValueError(f"drift matrix has {X.shape[0]} rows, expected {m}")
    if X.shape[1] and np.linalg.matrix_rank(X) < X.shape[1]:
        raise PosteriorError("drift matrix columns are linearly dependent")

    lam = eigs.lambdas
    keep = lam.shape[0] if rank is None else min(int(rank), lam.shape[0])
    keep = min(keep, int(np.count_nonzero(lam[:keep] > cutoff)))
    eigs = eigs.truncate(keep)
    lam = eigs.lambdas
    Dk = lam / (1.0 + lam)

    n_p = X.shape[1]
    if n_p == 0:
        return PosteriorRepresentation(prior, eigs, Dk, X, np.zeros((m, 0)), np.zeros((0, 0)),
                                       np.zeros((0, 0)), cutoff)
    WX = eigs.W.T @ X
    G = X - eigs.U @ (Dk[:, None] * WX)
    schur = WX.T @ (Dk[:, None] * WX)
    schur = 0.5 * (schur + schur.T)
    try:
        factor = cho_factor(schur, lower=True)
    except np.linalg.LinAlgError as exc:
        raise PosteriorError(
            "Schur complement is not positive definite; the retained modes do not "
            "inform every drift coefficient") from exc
    schur_inv = cho_solve(factor, np.eye(n_p))
    schur_inv = 0.5 * (schur_inv + schur_inv.T)
    logdet = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
    return PosteriorRepresentation(prior, eigs, Dk, X, G, schur, schur_inv, cutoff, logdet)


def apply_fss_inv(rep: PosteriorRepresentation, x):
    """``(Gamma_prior - U_k D_k U_k^T) x`` for a vector or ``(m, r)`` block."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] != rep.m:
        raise ValueError(f"expected leading dimension {rep.m}, got {x.shape[0]}")
    U, D = rep.eigs.U, rep.Dk
    if x.ndim == 1:
        return rep.prior.matvec(x) - U @ (D * (U.T @ x))
    return np.asarray(rep.prior.matmat(x)) - U @ (D[:, None] * (U.T @ x))


def apply_post(rep: PosteriorRepresentation, x):
    """Posterior covariance product on ``(s, beta)`` vectors of length ``m + n_p``."""
    x = np.asarray(x, dtype=float)
    m, n_p = rep.m, rep.n_p
    if x.shape[0] != m + n_p:
        raise ValueError(f"expected leading dimension {m + n_p}, got {x.shape[0]}")
    xs, xb = x[:m], x[m:]
    top = apply_fss_inv(rep, xs)
    if n_p == 0:
        return top
    t = rep.schur_inv @ (rep.G.T @ xs - xb)
    return np.concatenate([top + rep.G @ t, -t], axis=0)


def posterior_variance(rep: PosteriorRepresentation) -> np.ndarray:
    """Diagonal of the ``(s, s)`` block of the posterior covariance."""
    U = rep.eigs.U
    var = rep.prior.diagonal() - np.einsum("ij,j,ij->i", U, rep.Dk, U)
    if rep.n_p:
        var = var + np.einsum("ij,jk,ik->i", rep.G, rep.schur_inv, rep.G)
    if np.any(var < 0):
        warnings.warn(f"{int(np.sum(var < 0))} negative variance entries clamped to zero",
                      RuntimeWarning, stacklevel=2)
        var = np.clip(var, 0.0, None)
    return var


def trace_fss_inv(rep: PosteriorRepresentation) -> float:
    U = rep.eigs.U
    return float(rep.prior.trace() - np.einsum("ij,j,ij->", U, rep.Dk, U))
