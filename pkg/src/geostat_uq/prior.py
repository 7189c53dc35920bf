"""Matrix-free prior covariance on a regular grid."""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.sparse.linalg import LinearOperator
from scipy.spatial.distance import cdist

from .grid import MaternKernel, RegularGrid2D, kernel_eval, lag_distances
from .krylov import ConvergenceError, cg

DENSE_LIMIT = 4096
CLIP_RTOL = 1e-10
PADDING_FACTORS = (2, 4, 8, 16)


class EmbeddingError(RuntimeError):
    """Circulant embedding is indefinite beyond the clipping threshold."""


def _embedding_spectrum(grid: RegularGrid2D, kernel: MaternKernel, pad_x: int, pad_y: int):
    c = kernel_eval(kernel, lag_distances(grid, pad_x, pad_y))
    # symmetric first column => real spectrum
    return np.fft.rfft2(c).real, c


class PriorOperator(LinearOperator):
    """Stationary prior covariance ``Gamma_prior`` as a linear operator.

    In ``fft`` mode the block-Toeplitz covariance is embedded in a
    ``(2nx) x (2ny)`` block-circulant matrix and applied with real FFTs in
    O(m log m). ``dense`` mode stores the full matrix and is meant for small
    grids and oracle comparisons. ``auto`` picks dense for ``m <= 4096``.

    The operator works on vectors of length ``m`` and on ``(m, r)`` blocks;
    ``prior @ X`` and ``prior.matmat(X)`` batch the FFTs.
    """

    def __init__(self, grid: RegularGrid2D, kernel: MaternKernel, mode: str = "fft"):
        if mode not in ("fft", "dense", "auto"):
            raise ValueError(f"unknown prior mode {mode!r}")
        if mode == "auto":
            mode = "dense" if grid.m <= DENSE_LIMIT else "fft"
        super().__init__(dtype=np.float64, shape=(grid.m, grid.m))
        self.grid = grid
        self.kernel = kernel
        self.mode = mode
        self.dense_matrix = None
        self.embedded_spectrum = None
        self._pad = (2 * grid.nx, 2 * grid.ny)
        self._sampling = None
        self._chol = None
        if mode == "fft":
            self.embedded_spectrum, _ = _embedding_spectrum(grid, kernel, *self._pad)
        else:
            self.dense_matrix = dense_covariance(grid, kernel)

    # -- LinearOperator protocol ------------------------------------------------

    def _matmat(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape[0] != self.grid.m:
            raise ValueError(f"expected leading dimension {self.grid.m}, got {X.shape[0]}")
        if not np.all(np.isfinite(X)):
            raise ValueError("input contains non-finite values")
        if self.mode == "dense":
            return self.dense_matrix @ X
        nx, ny = self.grid.shape
        px, py = self._pad
        r = X.shape[1]
        fields = X.T.reshape(r, nx, ny)
        spec = np.fft.rfft2(fields, s=(px, py))
        spec *= self.embedded_spectrum
        out = np.fft.irfft2(spec, s=(px, py))[:, :nx, :ny]
        return out.reshape(r, -1).T

    def _matvec(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.grid.m:
            raise ValueError(f"expected length {self.grid.m}, got {x.shape[0]}")
        return self._matmat(x.reshape(-1, 1)).ravel()

    def _rmatvec(self, x):
        return self._matvec(x)

    def _rmatmat(self, X):
        return self._matmat(X)

    def _adjoint(self):
        return self

    # -- public operations -------------------------------------------------------

    def apply(self, x):
        """``Gamma_prior @ x`` for a vector or an ``(m, r)`` block."""
        x = np.asarray(x, dtype=float)
        return self._matvec(x) if x.ndim == 1 else self._matmat(x)

    def apply_inverse(self, x, tol: float = 1e-10, maxiter: int | None = None):
        """Solve ``Gamma_prior y = x`` by conjugate gradients.

        Raises :class:`ConvergenceError` (carrying the solve report) if the
        relative residual does not reach ``tol`` within ``maxiter`` iterations
        (default ``10*sqrt(m)``, at least 50).
        """
        if not tol > 0:
            raise ValueError("tol must be positive")
        x = np.asarray(x, dtype=float)
        if x.shape != (self.grid.m,):
            raise ValueError(f"expected vector of length {self.grid.m}")
        if maxiter is None:
            maxiter = max(50, int(10 * math.sqrt(self.grid.m)))
        y, report = cg(self, x, tol=tol, maxiter=maxiter)
        if not report.converged:
            raise ConvergenceError(
                f"prior inverse did not converge: residual {report.residual:.3e} after "
                f"{report.iterations} iterations", report)
        return y

    def diagonal(self) -> np.ndarray:
        return np.full(self.grid.m, self.kernel.theta)

    def trace(self) -> float:
        return self.grid.m * self.kernel.theta

    def to_dense(self) -> np.ndarray:
        if self.dense_matrix is not None:
            return self.dense_matrix
        return dense_covariance(self.grid, self.kernel)

    def logdet(self) -> float:
        """Log-determinant via dense Cholesky; only for ``m <= 4096``."""
        if self.grid.m > DENSE_LIMIT:
            raise ValueError(f"dense log-determinant refused for m={self.grid.m} > {DENSE_LIMIT}")
        if self._chol is None:
            self._chol = cho_factor(self.to_dense(), lower=True)
        return 2.0 * float(np.sum(np.log(np.diag(self._chol[0]))))

    def solve_dense(self, x):
        if self._chol is None:
            self.logdet()
        return cho_solve(self._chol, x)

    # -- sampling ------------------------------------------------------------------

    def _sampling_spectrum(self):
        if self._sampling is not None:
            return self._sampling
        nx, ny = self.grid.shape
        worst = None
        for factor in PADDING_FACTORS:
            px, py = factor * nx, factor * ny
            if (px, py) == self._pad and self.embedded_spectrum is not None:
                lam = self.embedded_spectrum
            else:
                lam, _ = _embedding_spectrum(self.grid, self.kernel, px, py)
            lam_max = lam.max()
            if lam.min() >= -CLIP_RTOL * lam_max:
                # rfft2 holds half the spectrum; expand for complex sampling
                full = np.fft.fft2(kernel_eval(self.kernel, lag_distances(self.grid, px, py))).real
                self._sampling = (np.clip(full, 0.0, None), px, py)
                return self._sampling
            worst = lam.min() / lam_max
        raise EmbeddingError(
            f"circulant embedding indefinite even at {PADDING_FACTORS[-1]}x padding "
            f"(min/max eigenvalue ratio {worst:.3e})")

    def sample_realization(self, seed, size: int | None = None) -> np.ndarray:
        """Zero-mean Gaussian draw(s) with covariance ``Gamma_prior``.

        Uses circulant embedding: complex white noise is scaled by the square
        root of the embedding spectrum and transformed by an FFT; the real part
        restricted to the grid is an exact sample when the embedding is
        nonnegative. ``seed`` seeds :func:`numpy.random.default_rng` (PCG64).
        Returns shape ``(m,)`` or ``(size, m)``.
        """
        lam, px, py = self._sampling_spectrum()
        rng = np.random.default_rng(seed)
        count = 1 if size is None else int(size)
        nx, ny = self.grid.shape
        scale = np.sqrt(lam / (px * py))
        out = np.empty((count, self.grid.m))
        for t in range(count):
            z = rng.standard_normal((px, py)) + 1j * rng.standard_normal((px, py))
            w = np.fft.fft2(scale * z)
            out[t] = w.real[:nx, :ny].ravel()
        return out[0] if size is None else out


def dense_covariance(grid: RegularGrid2D, kernel: MaternKernel) -> np.ndarray:
    """Dense ``m x m`` covariance matrix from pairwise center distances."""
    pts = grid.centers()
    return np.asarray(kernel_eval(kernel, cdist(pts, pts)))
