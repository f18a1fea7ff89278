"""k-nearest-neighbour entropy and mutual information estimators.

All neighbourhoods use the max-norm. ``kl_entropy`` is the
Kozachenko-Leonenko estimator, ``ksg_mi`` the first KSG estimator of
Kraskov, Stoegbauer and Grassberger (2004).
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import digamma

from .errors import DegenerateCloud, DimensionMismatch

DEFAULT_K_NN = 3
JITTER_SCALE = 1e-10
KSG_VARIANT = "ksg-1"


def _cloud(points) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64)
    if p.ndim == 1:
        p = p[:, None]
    if p.ndim != 2:
        raise DimensionMismatch(f"expected an (n, m) sample array, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError("sample cloud has non-finite values")
    return p


def jitter(points: np.ndarray, seed: int = 0, mode: str = "auto") -> np.ndarray:
    """Break ties with uniform noise of size ``1e-10 * range`` per coordinate.

    ``mode='auto'`` only perturbs clouds that contain duplicate points, so
    continuous data is passed through untouched.
    """
    if mode == "never":
        return points
    if mode == "auto" and np.unique(points, axis=0).shape[0] == points.shape[0]:
        return points
    if mode not in ("auto", "always"):
        raise ValueError(f"unknown jitter mode {mode!r}")
    rng = np.random.default_rng(seed)
    span = np.ptp(points, axis=0)
    span = np.where(span > 0, span, np.maximum(np.abs(points).max(axis=0), 1.0))
    return points + rng.uniform(-1.0, 1.0, size=points.shape) * JITTER_SCALE * span


def _kth_distance_brute(points: np.ndarray, k: int, chunk: int = 512) -> np.ndarray:
    n = points.shape[0]
    out = np.empty(n)
    for start in range(0, n, chunk):
        block = points[start : start + chunk]
        dist = np.max(np.abs(block[:, None, :] - points[None, :, :]), axis=2)
        dist[np.arange(block.shape[0]), np.arange(start, start + block.shape[0])] = np.inf
        out[start : start + chunk] = np.partition(dist, k - 1, axis=1)[:, k - 1]
    return out


def _count_within_brute(points: np.ndarray, radius: np.ndarray, chunk: int = 512) -> np.ndarray:
    """Number of other points strictly closer than ``radius[i]``."""
    n = points.shape[0]
    out = np.empty(n, dtype=np.int64)
    for start in range(0, n, chunk):
        block = points[start : start + chunk]
        dist = np.max(np.abs(block[:, None, :] - points[None, :, :]), axis=2)
        out[start : start + chunk] = np.sum(dist < radius[start : start + chunk, None], axis=1) - 1
    return out


def _kth_distance(points: np.ndarray, k: int, method: str) -> np.ndarray:
    if method == "brute":
        return _kth_distance_brute(points, k)
    dist, _ = cKDTree(points).query(points, k=k + 1, p=np.inf)
    return dist[:, k]


def _count_within(points: np.ndarray, radius: np.ndarray, method: str) -> np.ndarray:
    if method == "brute":
        return _count_within_brute(points, radius)
    # strict inequality: shrink each radius to the next float below it
    r = np.nextafter(radius, 0.0)
    counts = cKDTree(points).query_ball_point(points, r=r, p=np.inf, return_length=True)
    return np.asarray(counts, dtype=np.int64) - 1


def kl_entropy(cloud, k_nn: int = DEFAULT_K_NN, *, seed: int = 0, jitter_mode: str = "auto", method: str = "kdtree") -> float:
    """Kozachenko-Leonenko differential entropy estimate in nats."""
    pts = _cloud(cloud)
    n, m = pts.shape
    if not 1 <= k_nn < n:
        raise ValueError(f"need 1 <= k_nn < n, got k_nn={k_nn}, n={n}")
    pts = jitter(pts, seed, jitter_mode)
    eps = _kth_distance(pts, k_nn, method)
    if np.any(eps <= 0):
        raise DegenerateCloud(f"{int(np.sum(eps <= 0))} points have a zero neighbour distance")
    return float(digamma(n) - digamma(k_nn) + m * np.log(2.0) + m * np.mean(np.log(eps)))


def ksg_mi(x, y, k_nn: int = DEFAULT_K_NN, *, seed: int = 0, jitter_mode: str = "auto", method: str = "kdtree") -> float:
    """KSG (variant 1) mutual information estimate in nats.

    The raw estimate is returned; it can be slightly negative.
    """
    xs, ys = _cloud(x), _cloud(y)
    n = xs.shape[0]
    if ys.shape[0] != n:
        raise DimensionMismatch(f"x has {n} samples but y has {ys.shape[0]}")
    if not 1 <= k_nn < n:
        raise ValueError(f"need 1 <= k_nn < n, got k_nn={k_nn}, n={n}")
    xs = jitter(xs, seed, jitter_mode)
    ys = jitter(ys, seed, jitter_mode)
    eps = _kth_distance(np.hstack([xs, ys]), k_nn, method)
    if np.any(eps <= 0):
        raise DegenerateCloud(f"{int(np.sum(eps <= 0))} points have a zero joint neighbour distance")
    nx = _count_within(xs, eps, method)
    ny = _count_within(ys, eps, method)
    return float(digamma(k_nn) + digamma(n) - np.mean(digamma(nx + 1) + digamma(ny + 1)))
