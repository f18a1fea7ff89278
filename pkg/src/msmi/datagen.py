"""Seeded synthetic paired datasets and their CSV serialization."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import DimensionMismatch, NotPositiveDefinite
from .gaussian import GaussianJointModel


@dataclass(frozen=True)
class PairedDataset:
    """``n`` aligned samples of (X, Y).

    ``population`` holds the exact generating Gaussian model when the
    generator knows it; it is not serialized.
    """

    x: np.ndarray
    y: np.ndarray
    provenance: dict[str, Any] = field(default_factory=dict)
    population: GaussianJointModel | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if y.ndim == 1:
            y = y[:, None]
        if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
            raise DimensionMismatch(f"x {x.shape} and y {y.shape} are not aligned sample matrices")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite values")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d_x(self) -> int:
        return self.x.shape[1]

    @property
    def d_y(self) -> int:
        return self.y.shape[1]

    def subset(self, idx) -> "PairedDataset":
        return PairedDataset(self.x[idx], self.y[idx], dict(self.provenance), self.population)


def _rng(rng) -> tuple[np.random.Generator, int | None]:
    if isinstance(rng, np.random.Generator):
        return rng, None
    return np.random.default_rng(rng), int(rng)


def gen_correlated_gaussian(n: int, rho: float, rng) -> PairedDataset:
    """Scalar pair with ``Y = rho X + sqrt(1 - rho^2) Z``."""
    if not -1.0 < rho < 1.0:
        raise ValueError(f"|rho| must be < 1, got {rho}")
    if n < 1:
        raise ValueError("n must be positive")
    gen, seed = _rng(rng)
    x = gen.standard_normal((n, 1))
    z = gen.standard_normal((n, 1))
    y = rho * x + np.sqrt(1.0 - rho * rho) * z
    pop = GaussianJointModel.from_blocks(np.eye(1), np.eye(1), np.array([[rho]]))
    prov = {"generator": "correlated", "n": n, "rho": rho, "seed": seed}
    return PairedDataset(x, y, prov, pop)


def gen_gaussian_pair(n: int, model: GaussianJointModel, rng, *, name: str = "gaussian") -> PairedDataset:
    """Sample from a joint Gaussian via Cholesky of its joint covariance.

    A ridge of growing size is tried if the joint covariance is only
    semidefinite; a zero covariance yields constant samples at the mean.
    """
    gen, seed = _rng(rng)
    joint = model.joint_cov()
    d = joint.shape[0]
    mean = np.concatenate([model.mean_x, model.mean_y])
    if not np.any(joint):
        factor = np.zeros_like(joint)
    else:
        factor = None
        scale = max(float(np.trace(joint)) / d, 1e-300)
        for ridge in (0.0, 1e-12, 1e-10, 1e-8):
            try:
                factor = np.linalg.cholesky(joint + ridge * scale * np.eye(d))
                break
            except np.linalg.LinAlgError:
                continue
        if factor is None:
            raise NotPositiveDefinite("joint covariance is not positive semidefinite")
    z = gen.standard_normal((n, d))
    s = mean + z @ factor.T
    prov = {"generator": name, "n": n, "seed": seed, "d_x": model.d_x, "d_y": model.d_y}
    return PairedDataset(s[:, : model.d_x], s[:, model.d_x :], prov, model)


def embedded_signal_model(d: int, rho: float, d_y: int | None = None) -> GaussianJointModel:
    """Identity marginals with correlation ``rho`` between coordinate 0 of X and Y only."""
    d_y = d if d_y is None else d_y
    cross = np.zeros((d, d_y))
    cross[0, 0] = rho
    return GaussianJointModel.from_blocks(np.eye(d), np.eye(d_y), cross)


def gen_embedded_signal(n: int, d: int, rho: float, rng) -> PairedDataset:
    ds = gen_gaussian_pair(n, embedded_signal_model(d, rho), rng, name="embedded")
    ds.provenance.update({"d": d, "rho": rho})
    return ds


def latent_subspace_model(p1: np.ndarray, p2: np.ndarray) -> GaussianJointModel:
    """Population model of ``X = P1 V + Z1``, ``Y = P2 V + Z2``."""
    return GaussianJointModel.from_blocks(
        p1 @ p1.T + np.eye(p1.shape[0]), p2 @ p2.T + np.eye(p2.shape[0]), p1 @ p2.T
    )


def gen_latent_subspace(n: int, d: int, d_prime: int, dependent: bool, rng) -> PairedDataset:
    """Vectors sharing a latent ``d_prime``-dimensional Gaussian factor.

    With ``dependent=False`` X and Y get independent copies of the latent
    factor, so the marginal laws match the dependent case exactly.
    """
    if not 1 <= d_prime <= d:
        raise DimensionMismatch(f"need 1 <= d_prime <= d, got d={d}, d_prime={d_prime}")
    gen, seed = _rng(rng)
    p1 = gen.standard_normal((d, d_prime))
    p2 = gen.standard_normal((d, d_prime))
    v = gen.standard_normal((n, d_prime))
    v_y = v if dependent else gen.standard_normal((n, d_prime))
    x = v @ p1.T + gen.standard_normal((n, d))
    y = v_y @ p2.T + gen.standard_normal((n, d))
    if dependent:
        pop = latent_subspace_model(p1, p2)
    else:
        pop = GaussianJointModel.from_blocks(p1 @ p1.T + np.eye(d), p2 @ p2.T + np.eye(d), np.zeros((d, d)))
    prov = {"generator": "latent", "n": n, "d": d, "d_prime": d_prime, "dependent": bool(dependent), "seed": seed}
    return PairedDataset(x, y, prov, pop)


# --- CSV serialization ----------------------------------------------------


def provenance_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + ".provenance.json")


def write_csv(ds: PairedDataset, path, *, sidecar: bool = True) -> None:
    """Write ``x0..,y0..`` columns at 17 significant digits."""
    path = Path(path)
    header = ",".join([f"x{i}" for i in range(ds.d_x)] + [f"y{i}" for i in range(ds.d_y)])
    data = np.hstack([ds.x, ds.y])
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        for row in data:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    if sidecar:
        with open(provenance_path(path), "w") as fh:
            json.dump(ds.provenance, fh, indent=2, sort_keys=True)
            fh.write("\n")


def read_csv(path) -> PairedDataset:
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    xcols = [i for i, h in enumerate(header) if h.startswith("x")]
    ycols = [i for i, h in enumerate(header) if h.startswith("y")]
    if not xcols or not ycols or len(xcols) + len(ycols) != len(header):
        raise ValueError(f"{path}: header must be x0..x{{dx-1}},y0..y{{dy-1}}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2, dtype=np.float64)
    prov: dict[str, Any] = {"source": str(path)}
    side = provenance_path(path)
    if side.exists():
        with open(side) as fh:
            prov.update(json.load(fh))
    return PairedDataset(data[:, xcols], data[:, ycols], prov)
