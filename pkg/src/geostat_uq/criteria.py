"""Scalar uncertainty measures on a low-rank posterior representation.

All criteria act on the joint ``(s, beta)`` posterior covariance of size
``m + n_p``. Normalized criteria (A and C) divide by ``m + n_p``.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.sparse.linalg import aslinearoperator

from .posterior import PosteriorRepresentation, apply_post, trace_fss_inv

DEFAULT_PROBES = 64


def _size(rep: PosteriorRepresentation) -> int:
    return rep.m + rep.n_p


def trace_s_inv(rep: PosteriorRepresentation) -> float:
    """``Trace(S^{-1})``, the uncertainty in the drift coefficients."""
    if rep.n_p == 0:
        raise ValueError("no drift coefficients (n_p = 0)")
    return float(np.trace(rep.schur_inv))


def trace_post(rep: PosteriorRepresentation) -> float:
    """Exact ``Trace(Gamma_post)`` given the representation, O((k + n_p) m)."""
    total = trace_fss_inv(rep)
    if rep.n_p:
        total += float(np.einsum("ij,jk,ik->", rep.G, rep.schur_inv, rep.G))
        total += trace_s_inv(rep)
    return total


def phi_a_identity(rep: PosteriorRepresentation) -> float:
    """A-optimality with ``A = I``: ``Trace(Gamma_post) / (m + n_p)``."""
    return trace_post(rep) / _size(rep)


def rademacher_probes(size: int, probes: int, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.integers(0, 2, size=(size, probes)).astype(float) * 2.0 - 1.0


def phi_a_weighted(rep: PosteriorRepresentation, A, probes: int = DEFAULT_PROBES,
                   seed=0) -> float:
    """Hutchinson estimate of ``Trace(A Gamma_post)``.

    Parameters
    ----------
    rep : PosteriorRepresentation
    A : array_like or LinearOperator
        Weight operator of size ``m + n_p``.
    probes : int
        Number of Rademacher vectors.
    seed : int
        Seed for :func:`numpy.random.default_rng`.

    Returns
    -------
    float
        The (unnormalized) trace estimate; divide by ``m + n_p`` for the
        criterion value comparable with :func:`phi_a_identity`.
    """
    if probes < 1:
        raise ValueError("probes must be >= 1")
    n = _size(rep)
    A = aslinearoperator(A)
    if A.shape != (n, n):
        raise ValueError(f"weight operator has shape {A.shape}, expected {(n, n)}")
    V = rademacher_probes(n, probes, seed)
    PV = apply_post(rep, V)
    AV = np.asarray(A.rmatmat(V))
    # v^T A Gamma v = (A^T v)^T (Gamma v)
    return float(np.einsum("ij,ij->", AV, PV) / probes)


def phi_c(rep: PosteriorRepresentation, c) -> float:
    """C-optimality ``c^T Gamma_post c / (m + n_p)``."""
    c = np.asarray(c, dtype=float)
    n = _size(rep)
    if c.shape != (n,):
        raise ValueError(f"c must have length {n}")
    return float(c @ apply_post(rep, c)) / n


def phi_d_lowrank(rep: PosteriorRepresentation, include_prior_logdet: bool = False) -> float:
    """D-optimality ``log det Gamma_post`` by the determinant lemma.

    ``log det F_ss^{-1} = log det Gamma_prior + sum log(1 - D_k)`` and the
    drift block contributes ``-log det S``. The prior term is a constant
    across designs and is left out unless ``include_prior_logdet`` is set
    (which needs a dense factorization of the prior).
    """
    D = rep.Dk
    if np.any(D >= 1.0):
        raise ValueError("D_k entries must be < 1")
    value = float(np.sum(np.log1p(-D))) - rep.schur_logdet
    if include_prior_logdet:
        value += rep.prior.logdet()
    return value


def phi_e(rep: PosteriorRepresentation, tol: float = 1e-8, maxiter: int = 2000,
          seed=0) -> float:
    """E-optimality: the largest eigenvalue of ``Gamma_post`` by power iteration.

    Stops when the Rayleigh quotient changes by less than ``tol`` relative;
    on non-convergence a warning is issued and the last estimate returned.
    """
    n = _size(rep)
    x = np.random.default_rng(seed).standard_normal(n)
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(maxiter):
        y = apply_post(rep, x)
        new = float(x @ y)
        nrm = np.linalg.norm(y)
        if nrm == 0:
            return 0.0
        x = y / nrm
        if abs(new - est) <= tol * abs(new):
            return new
        est = new
    warnings.warn(f"power iteration did not converge in {maxiter} steps; last estimate {est:.6e}",
                  RuntimeWarning, stacklevel=2)
    return est


@dataclass
class CriteriaReport:
    phi_A: float
    phi_C: float
    phi_D_tilde: float
    phi_E: float
    trace_S_inv: float
    hutchinson_probes: int
    seed: int
    prior_logdet_dropped: bool = True

    def as_row(self) -> dict:
        return asdict(self)


def evaluate_criteria(rep: PosteriorRepresentation, c=None, probes: int = DEFAULT_PROBES,
                      seed: int = 0, weight=None, e_tol: float = 1e-8) -> CriteriaReport:
    """Evaluate every criterion; ``c`` defaults to a vector of ones.

    ``phi_A`` uses the exact identity path unless a ``weight`` operator is
    given, in which case the Hutchinson estimate (normalized) is reported.
    """
    n = _size(rep)
    c = np.ones(n) if c is None else c
    if weight is None:
        phi_a = phi_a_identity(rep)
    else:
        phi_a = phi_a_weighted(rep, weight, probes, seed) / n
    ts = trace_s_inv(rep) if rep.n_p else 0.0
    return CriteriaReport(phi_a, phi_c(rep, c), phi_d_lowrank(rep), phi_e(rep, e_tol, seed=seed),
                          ts, probes, seed)
