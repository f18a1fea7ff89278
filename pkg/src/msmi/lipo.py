"""AdaLIPO global maximization and its use for max-sliced estimates.

Candidates for a slice pair live in the box ``[-1, 1]^(d_x k + d_y k)``
and are mapped to the Stiefel manifold by QR before evaluation. The
Lipschitz bound uses Euclidean distances in the box.

Global AdaLIPO rounds alternate at random with local trust-region rounds
around the incumbent, which is what makes the search usable on the
needle-shaped optima of sliced objectives in ten or more dimensions.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import DimensionMismatch, RankDeficient
from .knn import DEFAULT_K_NN, KSG_VARIANT, kl_entropy, ksg_mi
from .linalg import stiefel_project
from .report import EstimateReport

LIPSCHITZ_FLOOR = 1e-8
MAX_REJECTIONS = 100_000
PROPOSAL_BLOCK = 256
# trust-region radius control, as fractions of the half box width
RADIUS_GROW = 2.0
RADIUS_SHRINK = 0.7
RADIUS_MAX = 1.0
RADIUS_RESTART = 1e-2


@dataclass(frozen=True)
class SearchBudget:
    max_evals: int = 1000
    exploration_prob: float = 0.1
    lipschitz_grid_base: float = 1.3
    seed: int = 0
    local_prob: float = 0.5
    local_radius: float = 0.25

    def __post_init__(self):
        if self.max_evals < 2:
            raise ValueError("max_evals must be at least 2")
        if not 0.0 < self.exploration_prob <= 1.0:
            raise ValueError("exploration_prob must lie in (0, 1]")
        if self.lipschitz_grid_base <= 1.0:
            raise ValueError("lipschitz_grid_base must exceed 1")
        if not 0.0 <= self.local_prob < 1.0:
            raise ValueError("local_prob must lie in [0, 1)")
        if self.local_radius <= 0.0:
            raise ValueError("local_radius must be positive")


@dataclass
class SearchTrace:
    points: list[np.ndarray] = field(default_factory=list)
    values: list[float] = field(default_factory=list)
    lipschitz: list[float] = field(default_factory=list)
    best_index: int = -1
    redrawn: int = 0
    rejections: int = 0
    local_steps: int = 0

    @property
    def best_value(self) -> float:
        return self.values[self.best_index]

    def running_best(self) -> np.ndarray:
        return np.maximum.accumulate(np.asarray(self.values))


def _grid_lipschitz(slope: float, base: float) -> float:
    if slope <= 0.0:
        return LIPSCHITZ_FLOOR
    return max(LIPSCHITZ_FLOOR, base ** math.ceil(math.log(slope) / math.log(base)))


def lipo_maximize(
    objective: Callable[[np.ndarray], float], lower, upper, budget: SearchBudget
) -> tuple[np.ndarray, float, SearchTrace]:
    """Maximize ``objective`` over the box ``[lower, upper]``.

    Each round after the first is local with probability ``local_prob``:
    a Gaussian step of radius ``r`` around the best point so far, with
    ``r`` grown on success, shrunk on failure and reset to
    ``local_radius`` once it falls below ``RADIUS_RESTART``. Other rounds
    are AdaLIPO: explore uniformly with probability ``exploration_prob``,
    else draw uniformly until the Lipschitz upper bound
    ``min_j f(x_j) + L * |x - x_j|`` reaches the best value. ``L`` is the
    smallest power of ``lipschitz_grid_base`` above every observed slope.
    An objective raising ``RankDeficient`` causes a redraw that does not
    consume budget.
    """
    lower = np.asarray(lower, dtype=np.float64)
    upper = np.asarray(upper, dtype=np.float64)
    if lower.shape != upper.shape or np.any(lower >= upper):
        raise ValueError("need lower < upper componentwise")
    p = lower.shape[0]
    half = 0.5 * (upper - lower)
    rng = np.random.default_rng(budget.seed)
    trace = SearchTrace()
    xs = np.empty((budget.max_evals, p))
    sq = np.empty(budget.max_evals)
    ys = np.empty(budget.max_evals)
    lip = LIPSCHITZ_FLOOR
    slope = 0.0
    radius = budget.local_radius
    best, best_at = -np.inf, -1

    def uniform(size=None):
        return lower + rng.uniform(size=(size, p) if size else p) * (upper - lower)

    def lipo_candidate(t):
        drawn = 0
        while True:
            cand = uniform(PROPOSAL_BLOCK)
            d2 = (cand**2).sum(axis=1)[:, None] + sq[None, :t] - 2.0 * cand @ xs[:t].T
            bound = np.min(ys[:t] + lip * np.sqrt(np.maximum(d2, 0.0)), axis=1)
            ok = np.flatnonzero(bound >= best)
            if ok.size:
                trace.rejections += drawn + int(ok[0])
                return cand[ok[0]]
            drawn += PROPOSAL_BLOCK
            if drawn >= MAX_REJECTIONS:
                trace.rejections += drawn
                return cand[-1]

    t = 0
    while t < budget.max_evals:
        local = t > 0 and rng.uniform() < budget.local_prob
        if local:
            x = np.clip(xs[best_at] + radius * half * rng.standard_normal(p), lower, upper)
        elif t == 0 or rng.uniform() < budget.exploration_prob:
            x = uniform()
        else:
            x = lipo_candidate(t)
        try:
            y = float(objective(x))
        except RankDeficient:
            trace.redrawn += 1
            continue
        if t > 0:
            gaps = np.sqrt(((xs[:t] - x) ** 2).sum(axis=1))
            mask = gaps > 0
            if np.any(mask):
                slope = max(slope, float(np.max(np.abs(ys[:t][mask] - y) / gaps[mask])))
            lip = _grid_lipschitz(slope, budget.lipschitz_grid_base)
        if local:
            trace.local_steps += 1
            if y > best:
                radius = min(RADIUS_GROW * radius, RADIUS_MAX)
            else:
                radius *= RADIUS_SHRINK
                if radius < RADIUS_RESTART:
                    radius = budget.local_radius
        if y > best:
            best, best_at = y, t
        xs[t], sq[t], ys[t] = x, float(x @ x), y
        trace.points.append(x.copy())
        trace.values.append(y)
        trace.lipschitz.append(lip)
        t += 1
    trace.best_index = int(np.argmax(ys))
    return xs[trace.best_index].copy(), float(ys[trace.best_index]), trace


def unpack_slices(theta: np.ndarray, d_x: int, d_y: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    a = stiefel_project(theta[: d_x * k].reshape(d_x, k))
    b = stiefel_project(theta[d_x * k :].reshape(d_y, k))
    return a, b


def _budget_echo(budget: SearchBudget) -> dict:
    return {
        "max_evals": budget.max_evals,
        "exploration_prob": budget.exploration_prob,
        "lipschitz_grid_base": budget.lipschitz_grid_base,
        "seed": budget.seed,
        "local_prob": budget.local_prob,
        "local_radius": budget.local_radius,
    }


def _trace_echo(trace: SearchTrace) -> dict:
    return {
        "trace_values": trace.values,
        "lipschitz_history": trace.lipschitz,
        "best_index": trace.best_index,
        "redrawn": trace.redrawn,
        "rejections": trace.rejections,
        "local_steps": trace.local_steps,
    }


def msmi_lipo(data, k: int, k_nn: int = DEFAULT_K_NN, budget: SearchBudget | None = None) -> EstimateReport:
    """Max-sliced MI by AdaLIPO search over slice pairs, scoring each pair
    with the KSG estimator on the projected samples."""
    budget = budget or SearchBudget()
    d_x, d_y = data.x.shape[1], data.y.shape[1]
    if k > min(d_x, d_y) or k < 1:
        raise DimensionMismatch(f"k={k} must lie in [1, min(d_x, d_y)]")
    if data.x.shape[0] <= k_nn:
        raise ValueError(f"need n > k_nn, got n={data.x.shape[0]}")
    start = time.perf_counter()

    def objective(theta):
        a, b = unpack_slices(theta, d_x, d_y, k)
        return ksg_mi(data.x @ a, data.y @ b, k_nn)

    p = (d_x + d_y) * k
    theta, value, trace = lipo_maximize(objective, -np.ones(p), np.ones(p), budget)
    a, b = unpack_slices(theta, d_x, d_y, k)
    return EstimateReport(
        method="msmi-lipo",
        value_nats=value,
        seed=budget.seed,
        slices=(a, b),
        eval_value=value,
        wall_time_s=time.perf_counter() - start,
        config={"k": k, "k_nn": k_nn, "budget": _budget_echo(budget)},
        extras={"search": "adalipo+tr", "mi_estimator": KSG_VARIANT, **_trace_echo(trace)},
    )


class MshResult(NamedTuple):
    value: float
    slice: np.ndarray
    trace: SearchTrace


def msh_lipo(samples, k: int, k_nn: int = DEFAULT_K_NN, budget: SearchBudget | None = None) -> MshResult:
    """Max-sliced differential entropy by AdaLIPO over ``k``-frames."""
    budget = budget or SearchBudget()
    pts = np.asarray(samples, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    d = pts.shape[1]
    if not 1 <= k <= d:
        raise DimensionMismatch(f"k={k} must lie in [1, d={d}]")

    def objective(theta):
        return kl_entropy(pts @ stiefel_project(theta.reshape(d, k)), k_nn)

    theta, value, trace = lipo_maximize(objective, -np.ones(d * k), np.ones(d * k), budget)
    return MshResult(value, stiefel_project(theta.reshape(d, k)), trace)
