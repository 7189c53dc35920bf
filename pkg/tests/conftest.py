import numpy as np
import pytest

from geostat_uq.grid import MaternKernel, RegularGrid2D
from geostat_uq.prior import PriorOperator
from geostat_uq.raytomo import assemble_h, standard_setup


class DenseInstance:
    """5x5 ray problem with nine travel times, small enough for dense algebra."""

    def __init__(self, nu=0.5, theta=1.0, L=0.5, sigma=1e-2):
        self.grid = RegularGrid2D.unit_square(5)
        self.prior = PriorOperator(self.grid, MaternKernel(nu, theta, L), mode="dense")
        self.H = assemble_h(standard_setup(self.grid, 3, 3)).toarray()
        self.sigma = sigma
        self.Hred = self.H.T @ self.H / sigma**2
        self.X = np.ones((self.grid.m, 1))
        self.gamma = self.prior.to_dense()

    def posterior(self):
        """Inverse of the full (s, beta) precision matrix, built from scratch."""
        gi = np.linalg.inv(self.gamma)
        X = self.X
        F = np.block([[gi + self.Hred, gi @ X], [X.T @ gi, X.T @ gi @ X]])
        return np.linalg.inv(F)

    def fss_inv(self):
        g = self.gamma
        H = self.H
        K = H @ g @ H.T + self.sigma**2 * np.eye(H.shape[0])
        return g - g @ H.T @ np.linalg.solve(K, H @ g)


@pytest.fixture
def dense_instance():
    return DenseInstance()


def random_spd(n, rng, cond=100.0):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (Q * np.geomspace(1.0, cond, n)) @ Q.T


ACCEPTANCE_LINES: dict = {}


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion and print it."""

    def record(number, passed, detail):
        line = f"acceptance {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
