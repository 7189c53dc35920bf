"""Dense reference computations for small instances.

These form every matrix explicitly (``O(m^3)``) and exist to check the
matrix-free path; the ``oracle`` subcommand runs them on a config.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from .criteria import phi_a_identity, phi_d_lowrank
from .posterior import apply_post, build_posterior, posterior_variance

MAX_ORACLE_M = 1024


def dense_posterior(gamma: np.ndarray, hred: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Inverse of ``[[G^-1 + Hred, G^-1 X], [X^T G^-1, X^T G^-1 X]]``."""
    gi = np.linalg.inv(gamma)
    gi = 0.5 * (gi + gi.T)
    F = np.block([[gi + hred, gi @ X], [X.T @ gi, X.T @ gi @ X]])
    post = np.linalg.inv(F)
    return 0.5 * (post + post.T)


def dense_ghep(hred: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """Eigenvalues of ``Hred x = lambda Gamma^{-1} x``, descending."""
    return sla.eigh(hred, np.linalg.inv(gamma), eigvals_only=True)[::-1]


def compare_posterior(prior, eigs, X, hred_dense, probes: int = 20, seed: int = 0) -> dict:
    """Relative errors of the low-rank posterior against the dense inverse.

    Uses every supplied eigenpair (cutoff 0).
    """
    rep = build_posterior(prior, eigs, X, cutoff=0.0)
    post = dense_posterior(prior.to_dense(), hred_dense, X)
    m = prior.shape[0]
    n = post.shape[0]
    var_exact = np.diag(post)[:m]
    errors = {
        "variance": float(np.max(np.abs(posterior_variance(rep) - var_exact))
                          / np.max(np.abs(var_exact))),
        "trace": abs(phi_a_identity(rep) * n - np.trace(post)) / abs(np.trace(post)),
    }
    sign, logdet = np.linalg.slogdet(post)
    errors["logdet"] = abs(phi_d_lowrank(rep, include_prior_logdet=True) - logdet) / abs(logdet)
    V = np.random.default_rng(seed).standard_normal((n, probes))
    errors["matvec"] = float(np.linalg.norm(apply_post(rep, V) - post @ V) / np.linalg.norm(post @ V))
    return errors
