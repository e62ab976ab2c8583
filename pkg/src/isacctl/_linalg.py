"""Small symmetric-matrix helpers shared across modules."""

import numpy as np
from scipy import linalg as la

EIG_TOL = 1e-10


def symmetrize(X):
    X = np.asarray(X, dtype=float)
    return 0.5 * (X + np.swapaxes(X, -1, -2))


def min_eig(X):
    """Smallest eigenvalue of the symmetric part of ``X``."""
    return float(np.linalg.eigvalsh(symmetrize(X))[0])


def is_pd(X, tol=EIG_TOL):
    return min_eig(X) > tol


def is_psd(X, tol=EIG_TOL):
    return min_eig(X) >= -tol


def spd_solve(M, R):
    """Solve ``M Z = R`` for symmetric positive definite ``M`` via Cholesky."""
    c = la.cho_factor(symmetrize(M))
    return la.cho_solve(c, np.asarray(R, dtype=float))


def spd_inv(M):
    """Inverse of an SPD matrix, or of a stack of them with shape (..., n, n)."""
    M = symmetrize(M)
    if M.shape[-1] == 1:
        return 1.0 / M
    L = np.linalg.cholesky(M)
    eye = np.broadcast_to(np.eye(M.shape[-1]), M.shape)
    Linv = np.linalg.solve(L, eye)
    return symmetrize(np.swapaxes(Linv, -1, -2) @ Linv)
