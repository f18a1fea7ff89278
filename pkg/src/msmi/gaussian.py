"""Closed-form Gaussian quantities: CCA, max-sliced mutual information,
Gaussian mutual information and max-sliced entropy."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DimensionMismatch, NotPositiveDefinite, TooFewSamples
from .linalg import default_ridge, spd_inv_sqrt, stiefel_project, svd_top_k, sym_eig_desc

SIGMA_CLIP = 1.0 - 1e-12
PSD_TOL = 1e-8


@dataclass(frozen=True)
class GaussianJointModel:
    mean_x: np.ndarray
    mean_y: np.ndarray
    cov_x: np.ndarray
    cov_y: np.ndarray
    cross_cov: np.ndarray

    def __post_init__(self):
        for name in ("mean_x", "mean_y", "cov_x", "cov_y", "cross_cov"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        dx, dy = self.mean_x.shape[0], self.mean_y.shape[0]
        if self.cov_x.shape != (dx, dx) or self.cov_y.shape != (dy, dy) or self.cross_cov.shape != (dx, dy):
            raise DimensionMismatch("covariance blocks do not match the mean dimensions")
        lam = np.linalg.eigvalsh(self.joint_cov())
        if lam[0] < -PSD_TOL:
            raise NotPositiveDefinite(f"joint covariance has eigenvalue {lam[0]:.3g}")

    @classmethod
    def from_blocks(cls, cov_x, cov_y, cross_cov, mean_x=None, mean_y=None) -> "GaussianJointModel":
        cov_x = np.atleast_2d(np.asarray(cov_x, dtype=np.float64))
        cov_y = np.atleast_2d(np.asarray(cov_y, dtype=np.float64))
        mean_x = np.zeros(cov_x.shape[0]) if mean_x is None else mean_x
        mean_y = np.zeros(cov_y.shape[0]) if mean_y is None else mean_y
        return cls(mean_x, mean_y, cov_x, cov_y, np.atleast_2d(cross_cov))

    @property
    def d_x(self) -> int:
        return self.cov_x.shape[0]

    @property
    def d_y(self) -> int:
        return self.cov_y.shape[0]

    def joint_cov(self) -> np.ndarray:
        return np.block([[self.cov_x, self.cross_cov], [self.cross_cov.T, self.cov_y]])

    def transformed(self, mx: np.ndarray, my: np.ndarray) -> "GaussianJointModel":
        """Model of ``(mx @ X, my @ Y)``."""
        return GaussianJointModel(
            mx @ self.mean_x, my @ self.mean_y, mx @ self.cov_x @ mx.T, my @ self.cov_y @ my.T, mx @ self.cross_cov @ my.T
        )


@dataclass(frozen=True)
class CcaSolution:
    a: np.ndarray
    b: np.ndarray
    canonical_correlations: np.ndarray

    def stiefel_slices(self) -> tuple[np.ndarray, np.ndarray]:
        """Orthonormal bases of the canonical subspaces (same projected MI)."""
        return stiefel_project(self.a), stiefel_project(self.b)


class GaussianMsmi(NamedTuple):
    value: float
    slices: CcaSolution
    degenerate: bool


def fit_gaussian(data) -> GaussianJointModel:
    """Sample moments of a paired dataset (covariances normalized by n - 1)."""
    n = data.x.shape[0]
    if n < 2:
        raise TooFewSamples(f"need at least 2 samples, got {n}")
    dx = data.x.shape[1]
    if n <= max(dx, data.y.shape[1]):
        warnings.warn(f"n={n} does not exceed the dimension; covariance will be singular", stacklevel=2)
    joint = np.cov(np.hstack([data.x, data.y]), rowvar=False, ddof=1)
    joint = np.atleast_2d(joint)
    return GaussianJointModel(
        data.x.mean(axis=0), data.y.mean(axis=0), joint[:dx, :dx], joint[dx:, dx:], joint[:dx, dx:]
    )


def sample_ridges(model: GaussianJointModel) -> tuple[float, float]:
    """Default ridges for covariances estimated from data."""
    return default_ridge(model.cov_x), default_ridge(model.cov_y)


def coherence(model: GaussianJointModel, ridge: float | tuple[float, float] = 0.0) -> np.ndarray:
    """Whitened cross-covariance ``cov_x^{-1/2} cross_cov cov_y^{-1/2}``."""
    rx, ry = ridge if isinstance(ridge, tuple) else (ridge, ridge)
    wx = spd_inv_sqrt(model.cov_x, rx)
    wy = spd_inv_sqrt(model.cov_y, ry)
    return wx @ model.cross_cov @ wy


def _canonical_signs(a: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(a), axis=0)
    return np.where(a[idx, np.arange(a.shape[1])] < 0, -1.0, 1.0)


def cca_k(model: GaussianJointModel, k: int, ridge: float | tuple[float, float] = 0.0) -> CcaSolution:
    if not 1 <= k <= min(model.d_x, model.d_y):
        raise DimensionMismatch(f"k={k} exceeds min(d_x, d_y)={min(model.d_x, model.d_y)}")
    rx, ry = ridge if isinstance(ridge, tuple) else (ridge, ridge)
    wx = spd_inv_sqrt(model.cov_x, rx)
    wy = spd_inv_sqrt(model.cov_y, ry)
    sigma, u, v = svd_top_k(wx @ model.cross_cov @ wy, k)
    a, b = wx @ u, wy @ v
    signs = _canonical_signs(a)
    return CcaSolution(a * signs, b * signs, sigma)


def gaussian_msmi(model: GaussianJointModel, k: int, ridge: float | tuple[float, float] = 0.0) -> GaussianMsmi:
    """Max-sliced MI of a Gaussian pair: ``-1/2 sum_i log(1 - sigma_i^2)`` over
    the top-``k`` canonical correlations. ``degenerate`` reports clipping at
    ``1 - 1e-12``."""
    cca = cca_k(model, k, ridge)
    sigma = cca.canonical_correlations
    degenerate = bool(np.any(sigma > SIGMA_CLIP))
    sigma = np.minimum(sigma, SIGMA_CLIP)
    value = float(-0.5 * np.sum(np.log1p(-(sigma**2))))
    return GaussianMsmi(value, cca, degenerate)


def gaussian_mi(model: GaussianJointModel, ridge: float | tuple[float, float] = 0.0) -> float:
    """Full mutual information ``-1/2 log det(I - T^T T)``."""
    t = coherence(model, ridge)
    sign, logdet = np.linalg.slogdet(np.eye(t.shape[1]) - t.T @ t)
    if sign <= 0:
        raise NotPositiveDefinite("joint covariance is singular (a canonical correlation equals 1)")
    return float(-0.5 * logdet)


def gaussian_entropy(cov) -> float:
    cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        raise NotPositiveDefinite("covariance is not positive definite")
    d = cov.shape[0]
    return 0.5 * (d * math.log(2 * math.pi * math.e) + logdet)


def max_sliced_entropy_gaussian(cov, k: int) -> tuple[float, np.ndarray]:
    """Top-``k`` PCA entropy ``1/2 sum_i log(2 pi e lambda_i)`` and its slice."""
    cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
    if not 1 <= k <= cov.shape[0]:
        raise DimensionMismatch(f"k={k} out of range for d={cov.shape[0]}")
    lam, w = sym_eig_desc(cov)
    if lam[k - 1] <= 0:
        raise NotPositiveDefinite(f"eigenvalue {lam[k - 1]:.3g} is not positive")
    a = w[:, :k]
    a = a * _canonical_signs(a)
    return float(0.5 * np.sum(np.log(2 * math.pi * math.e * lam[:k]))), a


def msh_uniform_ball(radius: float, k: int) -> float:
    """Largest max-sliced entropy over laws supported in a ball of ``radius``:
    the entropy of the uniform law on a ``k``-dimensional ball."""
    if radius <= 0 or k < 1:
        raise ValueError("need radius > 0 and k >= 1")
    return 0.5 * k * math.log(math.pi * radius * radius) - math.lgamma(0.5 * k + 1.0)
