"""Small dense linear-algebra helpers for positive definite matrices.

Everything here works on tiny matrices (m is the number of outcomes), so the
helpers favour low call overhead over generality.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import InvalidParameterError

_SYM_TOL = 1e-8


def as_square(M, name="matrix") -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidParameterError(f"{name} must be square, got shape {M.shape}")
    return M


def cholesky(M, name="matrix") -> np.ndarray:
    """Lower Cholesky factor; raises :class:`InvalidParameterError` if not PD."""
    M = as_square(M, name)
    if not np.all(np.isfinite(M)):
        raise InvalidParameterError(f"{name} has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(M))))
    if np.max(np.abs(M - M.T)) > _SYM_TOL * scale:
        raise InvalidParameterError(f"{name} is not symmetric")
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise InvalidParameterError(f"{name} is not positive definite") from None


def is_pd(M) -> bool:
    try:
        cholesky(M)
    except InvalidParameterError:
        return False
    return True


def logdet_from_chol(L) -> float:
    return 2.0 * float(np.log(L.diagonal()).sum())


def tri_inv(L) -> np.ndarray:
    """Inverse of a lower-triangular matrix."""
    m = L.shape[0]
    if m == 1:
        return 1.0 / L
    if m == 2:
        a, c, d = L[0, 0], L[1, 0], L[1, 1]
        return np.array([[1.0 / a, 0.0], [-c / (a * d), 1.0 / d]])
    return np.linalg.solve(L, np.eye(m))


class PDFactor:
    """Cholesky factorisation of a positive definite matrix with cached pieces.

    ``quad(d)`` evaluates ``d_i^T M^{-1} d_i`` for every row of ``d``.
    """

    __slots__ = ("matrix", "L", "Linv", "logdet", "m")

    def __init__(self, matrix=None, L=None, name="matrix"):
        if L is None:
            matrix = as_square(matrix, name)
            L = cholesky(matrix, name)
        else:
            L = np.asarray(L, dtype=float)
            if matrix is None:
                matrix = L @ L.T
        self.matrix = matrix
        self.L = L
        self.m = L.shape[0]
        self.Linv = tri_inv(L)
        self.logdet = logdet_from_chol(L)

    def whiten(self, d) -> np.ndarray:
        return d @ self.Linv.T

    def quad(self, d) -> np.ndarray:
        w = self.whiten(d)
        return np.sum(w * w, axis=-1)

    def inverse(self) -> np.ndarray:
        return self.Linv.T @ self.Linv

    def trace_inv(self, A) -> float:
        """``tr(A M^{-1})``."""
        return float(np.sum(self.inverse() * A))


# --- log-Cholesky parameterisation -------------------------------------------

def n_tril(m: int) -> int:
    return m * (m + 1) // 2


@lru_cache(maxsize=None)
def tril_indices(m: int):
    return np.tril_indices(m)


@lru_cache(maxsize=None)
def _diag_positions(m: int) -> np.ndarray:
    rows, cols = tril_indices(m)
    return np.nonzero(rows == cols)[0]


@lru_cache(maxsize=None)
def _jacobian_powers(m: int) -> np.ndarray:
    return m - np.arange(m) + 1.0


def logchol_to_chol(v, m: int) -> np.ndarray:
    """Unconstrained vector (row-major lower triangle, log diagonal) to ``L``."""
    L = np.zeros((m, m))
    L[tril_indices(m)] = v
    d = np.diag_indices(m)
    L[d] = np.exp(L[d])
    return L


def chol_to_logchol(L) -> np.ndarray:
    L = np.array(L, dtype=float)
    m = L.shape[0]
    d = np.arange(m)
    L[d, d] = np.log(L[d, d])
    return L[tril_indices(m)].copy()


def matrix_to_logchol(M, name="matrix") -> np.ndarray:
    return chol_to_logchol(cholesky(M, name))


def logchol_to_matrix(v, m: int) -> np.ndarray:
    L = logchol_to_chol(v, m)
    return L @ L.T


def logchol_log_jacobian(v, m: int) -> float:
    """log |d(LL^T)/dv| for the log-Cholesky map.

    W = L L^T has Jacobian 2^m prod_i L_ii^(m-i+1) with respect to the free
    entries of L (i 1-based); the log diagonal adds one more power of L_ii.
    """
    v = np.asarray(v)
    return m * np.log(2.0) + float(np.dot(_jacobian_powers(m), v[_diag_positions(m)]))


def cov_to_corr(W) -> np.ndarray:
    s = np.sqrt(np.diag(W))
    R = W / np.outer(s, s)
    np.fill_diagonal(R, 1.0)
    return R
