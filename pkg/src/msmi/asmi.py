"""Average-sliced mutual information by Monte Carlo over Haar slices."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .errors import DimensionMismatch
from .knn import DEFAULT_K_NN, ksg_mi
from .linalg import haar_stiefel_sample


@dataclass(frozen=True)
class AsmiConfig:
    k: int = 1
    num_slices: int = 128
    k_nn: int = DEFAULT_K_NN
    seed: int = 0

    def __post_init__(self):
        if self.num_slices < 1:
            raise ValueError("num_slices must be at least 1")


class AsmiResult(NamedTuple):
    value: float
    per_slice: np.ndarray


def draw_slice_pairs(d_x: int, d_y: int, k: int, m: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    rng = np.random.default_rng(seed)
    return [(haar_stiefel_sample(k, d_x, rng), haar_stiefel_sample(k, d_y, rng)) for _ in range(m)]


def _check(data, k: int, k_nn: int) -> None:
    if not 1 <= k <= min(data.x.shape[1], data.y.shape[1]):
        raise DimensionMismatch(f"k={k} must lie in [1, min(d_x, d_y)]")
    if data.x.shape[0] <= k_nn:
        raise ValueError(f"need n > k_nn, got n={data.x.shape[0]}")


def asmi_estimate(data, cfg: AsmiConfig) -> AsmiResult:
    """Mean KSG estimate over ``num_slices`` independent Haar slice pairs."""
    _check(data, cfg.k, cfg.k_nn)
    pairs = draw_slice_pairs(data.x.shape[1], data.y.shape[1], cfg.k, cfg.num_slices, cfg.seed)
    per_slice = np.array([ksg_mi(data.x @ a, data.y @ b, cfg.k_nn) for a, b in pairs])
    return AsmiResult(float(np.mean(per_slice)), per_slice)


def asmi_neural(data, train_cfg, num_slices: int, seed: int = 0) -> AsmiResult:
    """Average of ``num_slices`` independent neural MI runs, each on a frozen
    Haar slice pair. This is the expensive parallel-critic baseline."""
    from .neural import train_msmi

    _check(data, train_cfg.k, 1)
    pairs = draw_slice_pairs(data.x.shape[1], data.y.shape[1], train_cfg.k, num_slices, seed)
    values = [
        train_msmi(data, replace(train_cfg, seed=train_cfg.seed + j), fixed_slices=pair).value_nats
        for j, pair in enumerate(pairs)
    ]
    per_slice = np.asarray(values)
    return AsmiResult(float(np.mean(per_slice)), per_slice)
