"""Sparse SPD factorization against dense references."""

import numpy as np
import pytest
import scipy.sparse as sp

from arealtrend.exceptions import NumericalError
from arealtrend.graph import laplacian_precision
from arealtrend.linalg import SparseCholesky
from arealtrend.synthgen import grid_graph


def _spd_matrix(n=25, rho=0.8):
    return laplacian_precision(grid_graph(5, n // 5), rho).tocsc()


class TestSparseCholesky:
    def test_solve_matches_dense(self):
        P = _spd_matrix()
        rng = np.random.default_rng(0)
        b = rng.standard_normal(P.shape[0])
        x = SparseCholesky(P).solve(b)
        np.testing.assert_allclose(x, np.linalg.solve(P.toarray(), b), atol=1e-12)

    def test_logdet_matches_dense(self):
        P = _spd_matrix()
        _, ld = np.linalg.slogdet(P.toarray())
        assert SparseCholesky(P).logdet() == pytest.approx(ld, abs=1e-10)

    def test_sample_covariance(self):
        P = laplacian_precision(grid_graph(2, 3), 0.6).tocsc()
        factor = SparseCholesky(P)
        rng = np.random.default_rng(7)
        draws = factor.sample(rng, size=200_000)
        emp = draws @ draws.T / draws.shape[1]
        target = np.linalg.inv(P.toarray())
        assert np.abs(emp - target).max() < 0.02

    def test_rejects_indefinite(self):
        M = sp.csc_matrix(np.array([[1.0, 2.0], [2.0, 1.0]]))  # eigenvalues 3, -1
        with pytest.raises(NumericalError):
            SparseCholesky(M)

    def test_quad_inv(self):
        P = _spd_matrix()
        u = np.zeros(P.shape[0])
        u[3], u[8] = 1.0, -1.0
        expected = u @ np.linalg.solve(P.toarray(), u)
        assert SparseCholesky(P).quad_inv(u) == pytest.approx(expected, rel=1e-12)
