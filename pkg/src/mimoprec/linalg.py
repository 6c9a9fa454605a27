"""Small Hermitian positive-definite helpers built on Cholesky factors."""

import numpy as np
import scipy.linalg as la


def hermitize(A):
    """Return (A + A^H)/2."""
    return 0.5 * (A + A.conj().T)


def chol(A):
    """Lower Cholesky factor of a Hermitian positive-definite matrix."""
    return la.cholesky(hermitize(A), lower=True, check_finite=False)


def logdet_hpd(A):
    """log det of a Hermitian positive-definite matrix (natural log)."""
    if A.shape[0] == 0:
        return 0.0
    Lc = chol(A)
    return 2.0 * float(np.sum(np.log(np.real(np.diag(Lc)))))


def solve_hpd(A, B):
    """Solve A X = B for Hermitian positive-definite A."""
    if A.shape[0] == 0:
        return np.zeros_like(B)
    return la.cho_solve((chol(A), True), B, check_finite=False)


def inv_hpd(A):
    return solve_hpd(A, np.eye(A.shape[0], dtype=A.dtype))


def normalize_columns(X, fallback=None, tol=0.0):
    """Scale every column of X to unit Euclidean norm.

    Columns with norm <= `tol` are replaced by the matching column of
    `fallback` (if given) and reported in the returned mask.
    """
    X = np.array(X, dtype=complex, copy=True)
    norms = np.linalg.norm(X, axis=0)
    dead = norms <= tol
    X[:, ~dead] /= norms[~dead]
    if np.any(dead):
        if fallback is None:
            X[:, dead] = 0.0
            X[0, dead] = 1.0
        else:
            X[:, dead] = fallback[:, dead]
    return X, dead
