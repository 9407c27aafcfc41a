"""Sparse symmetric factorization for Gaussian Markov random fields.

Wraps SuperLU in symmetric mode with a fill-reducing ordering so the
sampler can solve, compute log-determinants and draw zero-mean
Gaussians against a sparse precision matrix without ever forming its
dense inverse.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .exceptions import NumericalError


class SparseCholesky:
    """Cholesky-like factorization of a sparse SPD matrix.

    With diagonal pivoting disabled and symmetric mode on, SuperLU
    yields P[q][:, q] = L @ U with matching row/column permutations and
    U = diag(U) @ L.T, so L @ sqrt(diag(U)) is a genuine Cholesky factor
    of the symmetrically permuted matrix.  A non-positive pivot means
    the input was not positive definite.
    """

    def __init__(self, P: sp.spmatrix):
        P = sp.csc_matrix(P)
        if P.shape[0] != P.shape[1]:
            raise ValueError("matrix must be square")
        self.n = P.shape[0]
        try:
            self._lu = splu(
                P,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options=dict(SymmetricMode=True),
            )
        except RuntimeError as exc:
            raise NumericalError(f"sparse factorization failed: {exc}") from exc
        d = self._lu.U.diagonal()
        if not np.all(d > 0) or not np.array_equal(self._lu.perm_r, self._lu.perm_c):
            raise NumericalError("matrix is not positive definite")
        self._diag_u = d
        # q maps permuted coordinates back: P[q][:, q] == L @ U
        self._q = np.argsort(self._lu.perm_c)
        self._chol = (self._lu.L @ sp.diags(np.sqrt(d))).tocsr()

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Solve P x = b (vector or matrix right-hand side)."""
        return self._lu.solve(np.asarray(b, dtype=float))

    def logdet(self) -> float:
        return float(np.log(self._diag_u).sum())

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """Draw x ~ N(0, P^{-1}).

        Uses x = P^{-1} Q^T L_c z: covariance P^{-1} (Q^T L_c L_c^T Q) P^{-1}
        = P^{-1}, with only a sparse matvec and one solve per draw.
        """
        cols = 1 if size is None else size
        z = rng.standard_normal((self.n, cols))
        v = self._chol @ z
        b = np.empty_like(v)
        b[self._q, :] = v
        x = self._lu.solve(b)
        return x[:, 0] if size is None else x

    def quad_inv(self, u: np.ndarray) -> float:
        """Quadratic form u^T P^{-1} u."""
        return float(u @ self.solve(u))
