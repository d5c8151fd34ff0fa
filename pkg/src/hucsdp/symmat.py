"""Dense symmetric-matrix kernel.

Symmetric matrices are plain ``numpy`` arrays; functions here symmetrize their
inputs where it matters. ``svec`` uses the isometric convention (off-diagonal
entries scaled by sqrt(2), upper triangle, row-major) so that
``svec(A) @ svec(B) == frobenius(A, B)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS_CHOL = 1e-10
EPS_RANK = 1e-8
EPS_PSD = 1e-8
EPS_NULL = 1e-9

SQRT2 = np.sqrt(2.0)


class NotPsdError(ValueError):
    """Matrix has a negative eigenvalue beyond tolerance."""


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class FactorResult:
    factor: np.ndarray
    rank: int


def sym(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    return 0.5 * (M + M.T)


def _triu(n: int):
    return np.triu_indices(n)


def svec(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"svec needs a square matrix, got shape {M.shape}")
    iu, ju = _triu(M.shape[0])
    v = M[iu, ju].copy()
    v[iu != ju] *= SQRT2
    return v


def triangular_dim(length: int) -> int:
    """Return n with n(n+1)/2 == length, or raise."""
    n = int(round((np.sqrt(8 * length + 1) - 1) / 2))
    if n * (n + 1) // 2 != length or n < 1:
        raise DimensionError(f"length {length} is not a triangular number")
    return n


def smat(v) -> np.ndarray:
    v = np.asarray(v, dtype=float).ravel()
    n = triangular_dim(v.size)
    iu, ju = _triu(n)
    vals = v.copy()
    vals[iu != ju] /= SQRT2
    M = np.zeros((n, n))
    M[iu, ju] = vals
    M[ju, iu] = vals
    return M


def frobenius(A, B) -> float:
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape:
        raise DimensionError(f"shape mismatch {A.shape} vs {B.shape}")
    return float(np.sum(A * B))


def eig_sym(M) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues in descending order and matching orthonormal eigenvectors (columns)."""
    w, V = np.linalg.eigh(sym(M))
    return w[::-1].copy(), V[:, ::-1].copy()


def numerical_rank(M, eps_rank: float = EPS_RANK) -> int:
    w = np.linalg.eigvalsh(sym(M))
    lam_max = w[-1]
    if lam_max <= 0.0:
        return 0
    return int(np.count_nonzero(w > eps_rank * lam_max))


def psd_factor(M, eps_rank: float = EPS_RANK, eps_psd: float = EPS_PSD) -> FactorResult:
    """Rank-revealing factor R (n x k) with M = R R^T.

    Eigenvalue-based; eigenvalues below ``eps_rank * lambda_max`` are dropped and
    slightly negative ones (down to ``-eps_psd * lambda_max``) are clamped.
    """
    M = sym(M)
    n = M.shape[0]
    w, V = eig_sym(M)
    lam_max = max(w[0], 0.0)
    if w[-1] < -eps_psd * max(lam_max, 1.0):
        raise NotPsdError(f"lambda_min = {w[-1]:.3e} (lambda_max = {w[0]:.3e})")
    if lam_max == 0.0:
        return FactorResult(np.zeros((n, 0)), 0)
    keep = w > eps_rank * lam_max
    R = V[:, keep] * np.sqrt(w[keep])
    return FactorResult(R, int(keep.sum()))


def pivoted_cholesky(M, eps_rank: float = EPS_RANK) -> FactorResult:
    """Outer-product Cholesky with diagonal pivoting, stopped at the numerical rank.

    Returned factor rows are in the original ordering, so ``R @ R.T`` approximates
    ``M`` directly. Used as an alternative factorization by rank reduction.
    """
    A = sym(M).copy()
    n = A.shape[0]
    piv = np.arange(n)
    L = np.zeros((n, n))
    d0 = max(np.max(np.diag(A)), 0.0)
    k = 0
    for k in range(n):
        d = np.diag(A)[k:]
        j = k + int(np.argmax(d))
        if d0 == 0.0 or A[j, j] <= eps_rank * d0:
            break
        if j != k:
            A[[k, j], :] = A[[j, k], :]
            A[:, [k, j]] = A[:, [j, k]]
            L[[k, j], :k] = L[[j, k], :k]
            piv[[k, j]] = piv[[j, k]]
        L[k, k] = np.sqrt(A[k, k])
        L[k + 1:, k] = A[k + 1:, k] / L[k, k]
        A[k + 1:, k + 1:] -= np.outer(L[k + 1:, k], L[k + 1:, k])
    else:
        k = n
    R = np.zeros((n, k))
    R[piv, :] = L[:, :k]
    return FactorResult(R, k)


def null_space(A, eps_null: float = EPS_NULL) -> list[np.ndarray]:
    """Orthonormal basis of ker(A) from the SVD (right singular vectors)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    m, k = A.shape
    if k == 0:
        return []
    if m == 0:
        return [e for e in np.eye(k)]
    _, s, Vt = np.linalg.svd(A, full_matrices=True)
    smax = s[0] if s.size else 0.0
    if smax == 0.0:
        rank = 0
    else:
        rank = int(np.count_nonzero(s > eps_null * smax))
    return [Vt[i].copy() for i in range(rank, k)]
