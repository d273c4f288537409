"""Small dense linear algebra: rank-one inverse updates and cyclic Jacobi."""

from __future__ import annotations

import math

import numpy as np


def sherman_morrison_update(inv: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Return ``(A + u u^T)^{-1}`` given ``inv = A^{-1}`` for symmetric ``A``.

    The result is symmetrised so that drift does not break symmetry.
    """
    w = inv @ u
    denom = 1.0 + float(u @ w)
    out = inv - np.outer(w, w) / denom
    return 0.5 * (out + out.T)


def jacobi_eigh(
    a: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100
) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a real symmetric matrix by cyclic Jacobi rotations.

    Parameters
    ----------
    a : ndarray of shape (n, n)
        Symmetric input. It is not modified.
    tol : float
        Sweeps stop once the Frobenius norm of the off-diagonal part falls
        below ``tol * max(1, ||a||_F)``.
    max_sweeps : int
        Hard cap on the number of full sweeps.

    Returns
    -------
    eigenvalues : ndarray of shape (n,)
        Sorted in descending order.
    eigenvectors : ndarray of shape (n, n)
        Orthonormal columns matching ``eigenvalues``.
    """
    a = np.array(a, dtype=float, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.allclose(a, a.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(a).max(initial=0.0))):
        raise ValueError("matrix is not symmetric")
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    v = np.eye(n)
    threshold = tol * max(1.0, float(np.linalg.norm(a)))

    def off_norm(m: np.ndarray) -> float:
        off = m - np.diag(np.diag(m))
        return float(np.sqrt(np.sum(off * off)))

    for _ in range(max_sweeps):
        if off_norm(a) <= threshold:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                # A <- J^T A J with J the (p, q) Givens rotation
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq

    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]
