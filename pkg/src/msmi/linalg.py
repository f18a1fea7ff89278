"""Dense linear-algebra primitives: Stiefel projection, Haar sampling,
SPD inverse square roots and truncated SVD.

Matrices are plain ``numpy.ndarray`` objects of dtype float64.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, NotPositiveDefinite, RankDeficient

RANK_RTOL = 1e-12


def _as_matrix(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionMismatch(f"expected a 2-d matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return m


def gram_error(a: np.ndarray) -> float:
    """Max-abs deviation of ``a.T @ a`` from the identity."""
    a = np.asarray(a)
    return float(np.max(np.abs(a.T @ a - np.eye(a.shape[1]))))


def stiefel_project(m) -> np.ndarray:
    """Orthonormalize the columns of ``m`` via thin QR.

    The Q factor is made unique by flipping signs so that every diagonal
    entry of R is nonnegative; Q then spans the same column space as ``m``.

    Raises
    ------
    RankDeficient
        If the smallest singular value of ``m`` is below ``1e-12`` times
        the largest.
    """
    m = _as_matrix(m)
    rows, cols = m.shape
    if cols > rows:
        raise DimensionMismatch(f"need cols <= rows, got {m.shape}")
    s = np.linalg.svd(m, compute_uv=False)
    if s[0] == 0.0 or s[-1] <= RANK_RTOL * s[0]:
        raise RankDeficient(f"matrix of shape {m.shape} is rank deficient (sigma_min={s[-1]:.3g})")
    q, r = np.linalg.qr(m, mode="reduced")
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    return q * signs


def haar_stiefel_sample(k: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Draw a d x k matrix from the Haar measure on the Stiefel manifold."""
    if not 1 <= k <= d:
        raise DimensionMismatch(f"need 1 <= k <= d, got k={k}, d={d}")
    while True:
        g = rng.standard_normal((d, k))
        try:
            return stiefel_project(g)
        except RankDeficient:  # probability zero
            continue


def default_ridge(s: np.ndarray) -> float:
    s = np.asarray(s, dtype=np.float64)
    return 1e-6 * float(np.trace(s)) / s.shape[0]


def spd_inv_sqrt(s, ridge: float = 0.0) -> np.ndarray:
    """Inverse symmetric square root of ``s + ridge * I``.

    Raises
    ------
    NotPositiveDefinite
        If any eigenvalue of ``s + ridge * I`` is not strictly positive.
    """
    s = _as_matrix(s)
    if s.shape[0] != s.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got {s.shape}")
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    sym = 0.5 * (s + s.T) + ridge * np.eye(s.shape[0])
    lam, w = np.linalg.eigh(sym)
    if lam[0] <= 0.0:
        raise NotPositiveDefinite(f"smallest eigenvalue {lam[0]:.3g} is not positive")
    return (w / np.sqrt(lam)) @ w.T


def svd_top_k(m, k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Top-``k`` singular triplets, singular values in descending order.

    Returns ``(sigma, left, right)`` with ``m @ right[:, i] == sigma[i] * left[:, i]``.
    """
    m = _as_matrix(m)
    if not 1 <= k <= min(m.shape):
        raise DimensionMismatch(f"k={k} out of range for matrix of shape {m.shape}")
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    return s[:k].copy(), u[:, :k].copy(), vt[:k].T.copy()


def sym_eig_desc(s) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of a symmetric matrix, eigenvalues descending."""
    s = _as_matrix(s)
    lam, w = np.linalg.eigh(0.5 * (s + s.T))
    return lam[::-1].copy(), w[:, ::-1].copy()
