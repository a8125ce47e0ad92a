import numpy as np
import pytest
import scipy.sparse as sp

from pcasim.linsolve import (GmresControls, ZeroDiagonalError, gmres_solve,
                             jacobi_preconditioner, spmv)


def random_sparse(n, rng, density=0.2, spd=False):
    A = sp.random(n, n, density=density, random_state=np.random.RandomState(7),
                  format="csr")
    A = A + sp.identity(n) * n * 0.5
    if spd:
        A = (A + A.T) * 0.5
    return A.tocsr()


class TestSpmv:
    def test_identity(self, rng):
        A = sp.identity(7, format="csr")
        x = rng.normal(0, 1, 7)
        assert np.array_equal(spmv(A, x), x)

    def test_matches_dense_product(self, rng):
        D = rng.normal(0.0, 1.0, (5, 5))
        A = sp.csr_matrix(D)
        x = rng.normal(0.0, 1.0, 5)
        assert np.allclose(spmv(A, x), D @ x, atol=1e-14)

    def test_zero_matrix(self, rng):
        A = sp.csr_matrix((4, 4))
        assert np.array_equal(spmv(A, rng.normal(0, 1, 4)), np.zeros(4))

    def test_dimension_mismatch(self, rng):
        A = sp.identity(4, format="csr")
        with pytest.raises(ValueError, match="dimension mismatch"):
            spmv(A, np.ones(5))

    def test_linearity(self, rng):
        A = random_sparse(30, rng)
        x, y = rng.normal(0, 1, 30), rng.normal(0, 1, 30)
        a, b = 1.7, -0.3
        lhs = spmv(A, a * x + b * y)
        rhs = a * spmv(A, x) + b * spmv(A, y)
        assert np.allclose(lhs, rhs, rtol=1e-13, atol=1e-12)


class TestJacobi:
    def test_halves_for_twice_identity(self):
        A = sp.identity(5, format="csr") * 2.0
        pc = jacobi_preconditioner(A)
        assert np.allclose(pc(np.ones(5)), 0.5)

    def test_zero_diagonal_reports_index(self):
        A = sp.csr_matrix(np.diag([1.0, 0.0, 3.0]))
        with pytest.raises(ZeroDiagonalError) as err:
            jacobi_preconditioner(A)
        assert err.value.index == 1

    def test_preconditioned_identity_converges_immediately(self, rng):
        A = sp.identity(20, format="csr") * 3.0
        b = rng.normal(0, 1, 20)
        res = gmres_solve(A, b, preconditioner=jacobi_preconditioner(A),
                          controls=GmresControls(tolerance=1e-10))
        assert res.converged and res.iterations == 1
        assert np.allclose(res.x, b / 3.0, atol=1e-12)


class TestGmres:
    def test_recovers_known_solution(self, rng):
        A = random_sparse(50, rng, spd=True)
        x_known = rng.normal(0.0, 1.0, 50)
        b = A @ x_known
        res = gmres_solve(A, b, preconditioner=jacobi_preconditioner(A),
                          controls=GmresControls(tolerance=1e-12, max_iterations=200,
                                                 restart=None))
        assert res.converged
        assert np.abs(res.x - x_known).max() < 1e-8

    def test_finite_termination(self, rng):
        # Krylov exactness: an n-dimensional system solves in <= n iterations
        n = 20
        D = rng.normal(0.0, 1.0, (n, n)) + n * np.eye(n)
        A = sp.csr_matrix(D)
        b = rng.normal(0.0, 1.0, n)
        res = gmres_solve(A, b, controls=GmresControls(tolerance=1e-12, restart=None,
                                                       max_iterations=n))
        assert res.converged
        assert res.iterations <= n
        assert np.allclose(res.x, np.linalg.solve(D, b), atol=1e-8)

    def test_identity_one_iteration(self, rng):
        A = sp.identity(15, format="csr")
        res = gmres_solve(A, rng.normal(0, 1, 15),
                          controls=GmresControls(tolerance=1e-10))
        assert res.converged and res.iterations == 1

    def test_history_non_increasing(self, rng):
        A = random_sparse(80, rng)
        b = rng.normal(0.0, 1.0, 80)
        res = gmres_solve(A, b, preconditioner=jacobi_preconditioner(A),
                          controls=GmresControls(tolerance=1e-11, restart=None))
        h = res.residual_history
        assert np.all(np.diff(h) <= 1e-10 * h[0])

    def test_restarted_solve_converges(self, rng):
        A = random_sparse(60, rng)
        b = rng.normal(0.0, 1.0, 60)
        res = gmres_solve(A, b, preconditioner=jacobi_preconditioner(A),
                          controls=GmresControls(tolerance=1e-9, restart=8,
                                                 max_iterations=400))
        assert res.converged
        assert res.relative_residual <= 1e-9 * 1.01

    def test_nonconvergence_is_reported_not_raised(self, rng):
        A = random_sparse(40, rng)
        b = rng.normal(0.0, 1.0, 40)
        res = gmres_solve(A, b, controls=GmresControls(tolerance=1e-14, max_iterations=2))
        assert not res.converged
        assert res.iterations == 2
        assert np.all(np.isfinite(res.x))

    def test_matches_dense_solve_medium_systems(self, rng):
        for n in (50, 120, 200):
            D = rng.normal(0.0, 1.0, (n, n)) + 2.0 * n * np.eye(n)
            A = sp.csr_matrix(D)
            b = rng.normal(0.0, 1.0, n)
            res = gmres_solve(A, b, preconditioner=jacobi_preconditioner(A),
                              controls=GmresControls(tolerance=1e-13, restart=None,
                                                     max_iterations=2 * n))
            assert np.abs(res.x - np.linalg.solve(D, b)).max() < 1e-8

    def test_zero_rhs(self):
        A = sp.identity(6, format="csr")
        res = gmres_solve(A, np.zeros(6))
        assert res.converged and res.iterations == 0
        assert np.array_equal(res.x, np.zeros(6))

    def test_initial_guess_used(self, rng):
        A = random_sparse(25, rng)
        x_known = rng.normal(0.0, 1.0, 25)
        b = A @ x_known
        res = gmres_solve(A, b, x0=x_known, controls=GmresControls(tolerance=1e-8))
        assert res.converged and res.iterations == 0

    def test_controls_validation(self):
        with pytest.raises(ValueError):
            GmresControls(tolerance=0.0)
        with pytest.raises(ValueError):
            GmresControls(max_iterations=0)
