import numpy as np
import pytest
from scipy.sparse.linalg import LinearOperator

from geostat_uq.krylov import RankDeficiencyWarning, b_orthonormal_qr, cg, gmres_restarted

from conftest import random_spd


class TestGmres:
    def test_identity_one_iteration(self):
        b = np.arange(1.0, 6.0)
        x, rep = gmres_restarted(np.eye(5), b)
        np.testing.assert_allclose(x, b)
        assert rep.iterations == 1 and rep.converged

    def test_zero_rhs(self):
        x, rep = gmres_restarted(np.eye(3) * 2, np.zeros(3))
        np.testing.assert_array_equal(x, 0.0)
        assert rep.iterations == 0 and rep.converged

    def test_matches_direct_solve(self):
        rng = np.random.default_rng(0)
        A = np.eye(10) * 5 + rng.standard_normal((10, 10))
        b = rng.standard_normal(10)
        tol = 1e-10
        x, rep = gmres_restarted(A, b, tol=tol)
        ref = np.linalg.solve(A, b)
        assert rep.converged and rep.residual <= tol
        assert np.linalg.norm(x - ref) <= 10 * tol * np.linalg.cond(A) * np.linalg.norm(ref)

    def test_restarts_and_history_monotone_within_cycle(self):
        rng = np.random.default_rng(1)
        A = np.diag(np.linspace(1, 100, 60)) + 0.1 * rng.standard_normal((60, 60))
        b = rng.standard_normal(60)
        restart = 7
        x, rep = gmres_restarted(A, b, restart=restart, tol=1e-9, maxiter=2000)
        assert rep.converged
        assert np.linalg.norm(A @ x - b) <= 1e-9 * np.linalg.norm(b) * 1.01
        h = np.asarray(rep.history)
        for start in range(0, len(h), restart):
            cycle = h[start:start + restart]
            assert np.all(np.diff(cycle) <= 1e-12)

    def test_preconditioner(self):
        rng = np.random.default_rng(2)
        d = np.geomspace(1, 1e4, 40)
        A = np.diag(d) + 1e-3 * rng.standard_normal((40, 40))
        b = rng.standard_normal(40)
        _, plain = gmres_restarted(A, b, restart=10, tol=1e-10, maxiter=400)
        M = np.diag(1 / d)
        x, pre = gmres_restarted(A, b, restart=10, tol=1e-10, maxiter=400, M=M)
        assert pre.converged and pre.iterations < plain.iterations
        assert np.linalg.norm(A @ x - b) <= 1e-9 * np.linalg.norm(b)

    def test_stagnation_is_not_convergence(self):
        # singular system with b outside the range: residual cannot drop
        A = np.diag([1.0, 1.0, 0.0])
        x, rep = gmres_restarted(A, np.array([0.0, 0.0, 1.0]), restart=2, tol=1e-8, maxiter=50)
        assert not rep.converged
        assert rep.iterations < 50


class TestCg:
    def test_scaled_identity(self):
        x, rep = cg(2 * np.eye(4), np.full(4, 4.0))
        np.testing.assert_allclose(x, 2.0)
        assert rep.converged

    def test_matches_direct(self):
        rng = np.random.default_rng(3)
        A = random_spd(20, rng)
        b = rng.standard_normal(20)
        x, rep = cg(A, b, tol=1e-12)
        np.testing.assert_allclose(x, np.linalg.solve(A, b), rtol=1e-8)
        assert rep.residual <= 1e-12

    def test_tighter_tolerance_smaller_residual(self):
        rng = np.random.default_rng(4)
        A = random_spd(50, rng, cond=1e4)
        b = rng.standard_normal(50)
        r1 = cg(A, b, tol=1e-4)[1].residual
        r2 = cg(A, b, tol=1e-10)[1].residual
        assert r2 < r1

    def test_reports_nonconvergence(self):
        rng = np.random.default_rng(5)
        A = random_spd(50, rng, cond=1e6)
        _, rep = cg(A, rng.standard_normal(50), tol=1e-12, maxiter=3)
        assert not rep.converged and rep.iterations == 3

    def test_linear_operator_is_linear(self):
        rng = np.random.default_rng(6)
        A = random_spd(8, rng)
        op = LinearOperator((8, 8), matvec=lambda v: A @ v, dtype=float)
        x, y = rng.standard_normal((2, 8))
        np.testing.assert_allclose(op @ (x + 2 * y), op @ x + 2 * (op @ y), rtol=1e-10)


class TestBOrthonormalQR:
    def test_identity_orthonormal_input(self):
        Y, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((12, 4)))
        Y = Y * np.sign(np.diag(Y))  # diag of first 4 rows positive so R = I
        Q, R = b_orthonormal_qr(Y, np.eye(12))
        np.testing.assert_allclose(Q, Y, atol=1e-12)
        np.testing.assert_allclose(R, np.eye(4), atol=1e-12)

    def test_diagonal_b(self):
        rng = np.random.default_rng(1)
        Y = rng.standard_normal((30, 5))
        B = np.diag(rng.uniform(0.5, 5.0, 30))
        Q, R = b_orthonormal_qr(Y, B)
        np.testing.assert_allclose(Q.T @ B @ Q, np.eye(5), atol=1e-8)
        np.testing.assert_allclose(Q @ R, Y, atol=1e-10)
        assert np.allclose(R, np.triu(R)) and np.all(np.diag(R) > 0)

    def test_spd_b_and_bq(self):
        rng = np.random.default_rng(2)
        B = random_spd(25, rng, cond=1e3)
        Y = rng.standard_normal((25, 6))
        Q, R, BQ = b_orthonormal_qr(Y, B, return_bq=True)
        np.testing.assert_allclose(BQ, B @ Q, atol=1e-10)
        np.testing.assert_allclose(Q.T @ B @ Q, np.eye(6), atol=1e-8)

    def test_identity_b_matches_numpy_qr(self):
        Y = np.random.default_rng(3).standard_normal((20, 6))
        Q, R = b_orthonormal_qr(Y, np.eye(20))
        Qn, Rn = np.linalg.qr(Y)
        s = np.sign(np.diag(Rn))
        np.testing.assert_allclose(Q, Qn * s, atol=1e-10)
        np.testing.assert_allclose(R, Rn * s[:, None], atol=1e-10)

    def test_duplicate_column_dropped(self):
        Y = np.random.default_rng(4).standard_normal((10, 3))
        Y = np.column_stack([Y, Y[:, 1]])
        with pytest.warns(RankDeficiencyWarning, match=r"\[3\]"):
            Q, R = b_orthonormal_qr(Y, np.eye(10))
        assert Q.shape == (10, 3) and R.shape == (3, 4)
        np.testing.assert_allclose(Q @ R, Y, atol=1e-10)
