"""Neural max-sliced MI estimation with a Donsker-Varadhan critic.

Slices and critic are trained jointly by minibatch Adam ascent on

    mean f(A^T x_i, B^T y_i) - log mean exp f(A^T x_i, B^T y_sigma(i))

with ``sigma`` a derangement of the batch. The reported value is one pass
of the same objective over a held-out split.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, replace

import numpy as np
import torch

from .critic import CriticModel, LinearSlicer, MlpSlicer, save_checkpoint, theory_clip
from .errors import DimensionMismatch, NonFinite
from .linalg import gram_error
from .report import EstimateReport

log = logging.getLogger(__name__)

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass(frozen=True)
class TrainConfig:
    k: int = 1
    batch_size: int = 256
    epochs: int = 100
    learning_rate: float = 2e-4
    lr_schedule: str = "cosine"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    eval_fraction: float = 0.1
    negative_sampling: str = "cyclic"
    theory_mode: bool = False
    ell: int = 64
    seed: int = 0
    critic_kind: str = "separable"
    hidden: tuple[int, ...] = (256, 256)
    embed_dim: int = 32
    activation: str = "elu"
    slice_init_scale: float = 0.1
    qr_grad: str = "exact"
    dtype: str = "float32"

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if not 0.0 < self.eval_fraction < 1.0:
            raise ValueError("eval_fraction must lie in (0, 1)")
        if self.negative_sampling not in ("cyclic", "random"):
            raise ValueError(f"unknown negative_sampling {self.negative_sampling!r}")
        if self.epochs < 0 or self.k < 1:
            raise ValueError("epochs must be >= 0 and k >= 1")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.dtype not in _DTYPES:
            raise ValueError(f"unknown dtype {self.dtype!r}")
        object.__setattr__(self, "hidden", tuple(self.hidden))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def logmeanexp(values: np.ndarray) -> float:
    top = float(np.max(values))
    return top + float(np.log(np.mean(np.exp(values - top))))


def dv_objective(scores_joint, scores_product) -> float:
    """``mean(joint) - log mean exp(product)`` with a max-shifted log-mean-exp."""
    sj = np.asarray(scores_joint, dtype=np.float64)
    sp = np.asarray(scores_product, dtype=np.float64)
    if sj.size == 0 or sp.size == 0:
        raise ValueError("score lists must be nonempty")
    if not (np.all(np.isfinite(sj)) and np.all(np.isfinite(sp))):
        raise NonFinite("critic scores contain non-finite values")
    return float(np.mean(sj)) - logmeanexp(sp)


def dv_objective_torch(scores_joint: torch.Tensor, scores_product: torch.Tensor) -> torch.Tensor:
    top = scores_product.detach().max()
    return scores_joint.mean() - (top + torch.log(torch.exp(scores_product - top).mean()))


def dv_standard_error(scores_joint, scores_product) -> float:
    """Delta-method standard error of ``dv_objective`` for i.i.d. scores."""
    sj = np.asarray(scores_joint, dtype=np.float64)
    sp = np.asarray(scores_product, dtype=np.float64)
    w = np.exp(sp - sp.max())
    w /= w.mean()
    return float(np.sqrt(np.var(sj) / sj.size + np.var(w) / sp.size))


def derangement(n: int, mode: str = "cyclic", rng: np.random.Generator | None = None) -> np.ndarray:
    """Permutation of ``range(n)`` without fixed points.

    ``cyclic`` shifts by one; ``random`` draws uniformly among derangements by
    rejecting shuffles that have a fixed point.
    """
    if n < 2:
        raise ValueError("a derangement needs n >= 2")
    if mode == "cyclic":
        return (np.arange(n) + 1) % n
    if mode != "random":
        raise ValueError(f"unknown derangement mode {mode!r}")
    rng = rng if rng is not None else np.random.default_rng()
    idx = np.arange(n)
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == idx):
            return perm


class _Model(torch.nn.Module):
    def __init__(self, slicer, critic, dtype):
        super().__init__()
        self.slicer, self.critic, self.dtype = slicer, critic, dtype

    def scores(self, x, y, perm):
        u, v = self.slicer(x, y)
        return self.critic.pair_scores(u.to(self.dtype), v.to(self.dtype), perm)


def _build_critic(cfg: TrainConfig, gen: torch.Generator) -> CriticModel:
    dtype = _DTYPES[cfg.dtype]
    if cfg.theory_mode:
        return CriticModel("shallow", cfg.k, ell=cfg.ell, generator=gen, dtype=dtype)
    return CriticModel(cfg.critic_kind, cfg.k, hidden=cfg.hidden, embed_dim=cfg.embed_dim,
                       activation=cfg.activation, generator=gen, dtype=dtype)


def _split(n: int, eval_fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    n_eval = int(round(eval_fraction * n))
    if n_eval < 2 or n - n_eval < 2:
        raise ValueError(f"n={n} is too small for eval_fraction={eval_fraction}")
    perm = rng.permutation(n)
    return np.sort(perm[n_eval:]), np.sort(perm[:n_eval])


def _batches(order: np.ndarray, batch_size: int):
    for start in range(0, order.shape[0], batch_size):
        idx = order[start : start + batch_size]
        if idx.shape[0] >= 2:
            yield idx


def _train(data, cfg: TrainConfig, slicer, method: str, checkpoint=None, extras=None) -> EstimateReport:
    if data.x.shape[0] * cfg.eval_fraction < 4 - 1e-9:
        raise ValueError(f"need n >= 4/eval_fraction samples, got n={data.x.shape[0]}")
    start = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    if not isinstance(slicer, torch.nn.Module):
        slicer = slicer(gen)
    critic = _build_critic(cfg, gen)
    model = _Model(slicer, critic, _DTYPES[cfg.dtype])
    train_idx, eval_idx = _split(data.x.shape[0], cfg.eval_fraction, rng)
    x = torch.as_tensor(data.x, dtype=torch.float64)
    y = torch.as_tensor(data.y, dtype=torch.float64)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=cfg.learning_rate, betas=(cfg.adam_beta1, cfg.adam_beta2), eps=cfg.adam_eps)

    sched = None
    if cfg.lr_schedule == "cosine" and cfg.epochs > 0:
        steps = cfg.epochs * sum(1 for _ in _batches(train_idx, cfg.batch_size))
        sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(steps, 1))

    history: list[float] = []
    max_gram = 0.0
    for epoch in range(cfg.epochs):
        order = train_idx[rng.permutation(train_idx.shape[0])]
        total, count = 0.0, 0
        for idx in _batches(order, cfg.batch_size):
            perm = torch.as_tensor(derangement(idx.shape[0], cfg.negative_sampling, rng))
            joint, product = model.scores(x[idx], y[idx], perm)
            obj = dv_objective_torch(joint, product)
            if not torch.isfinite(obj):
                raise NonFinite(f"non-finite DV objective at epoch {epoch} (learning rate {cfg.learning_rate})")
            opt.zero_grad()
            (-obj).backward()
            opt.step()
            if sched is not None:
                sched.step()
            if cfg.theory_mode:
                theory_clip(critic, cfg.ell)
            if isinstance(slicer, LinearSlicer):
                with torch.no_grad():
                    a, b = slicer.slices()
                max_gram = max(max_gram, gram_error(a.numpy()), gram_error(b.numpy()))
            total += float(obj.detach()) * idx.shape[0]
            count += idx.shape[0]
        history.append(total / count)

    with torch.no_grad():
        perm = torch.as_tensor(derangement(eval_idx.shape[0], cfg.negative_sampling, rng))
        joint, product = model.scores(x[eval_idx], y[eval_idx], perm)
        joint_np, product_np = joint.double().numpy(), product.double().numpy()
        value = dv_objective(joint_np, product_np)
        std_error = dv_standard_error(joint_np, product_np)
        slices = None
        if isinstance(slicer, LinearSlicer):
            a, b = slicer.slices()
            slices = (a.numpy().copy(), b.numpy().copy())

    info = {"n_train": int(train_idx.shape[0]), "n_eval": int(eval_idx.shape[0]), "eval_std_error": std_error,
            **(extras or {})}
    if isinstance(slicer, LinearSlicer):
        info["max_gram_error"] = max_gram
        info["slice_reinitializations"] = slicer.reinitialized
        if slicer.reinitialized:
            log.warning("slice matrix re-randomized %d times after losing rank", slicer.reinitialized)
    if checkpoint is not None:
        save_checkpoint(checkpoint, critic, slicer, cfg.to_dict())
    return EstimateReport(
        method=method,
        value_nats=value,
        seed=cfg.seed,
        slices=slices,
        train_history=history,
        eval_value=value,
        wall_time_s=time.perf_counter() - start,
        config=cfg.to_dict(),
        extras=info,
    )


def _check_dims(data, k: int) -> None:
    if k > min(data.x.shape[1], data.y.shape[1]):
        raise DimensionMismatch(f"k={k} exceeds min(d_x, d_y)")


def train_msmi(data, cfg: TrainConfig, *, fixed_slices=None, checkpoint=None) -> EstimateReport:
    """Neural max-sliced MI with Stiefel slices trained through QR.

    ``fixed_slices=(A, B)`` freezes the slices, which turns the run into a
    plain neural MI estimate between ``A^T X`` and ``B^T Y``.
    """
    _check_dims(data, cfg.k)
    d_x, d_y = data.x.shape[1], data.y.shape[1]

    def make(gen):
        return LinearSlicer(d_x, d_y, cfg.k, init_scale=cfg.slice_init_scale, qr_grad=cfg.qr_grad,
                            generator=gen, fixed=fixed_slices)

    return _train(data, cfg, make, "msmi-neural", checkpoint)


def train_generalized_msmi(data, cfg: TrainConfig, slicer_hidden: int = 32, *, checkpoint=None,
                           compare_linear: bool = False) -> EstimateReport:
    """Generalized max-sliced MI with one-hidden-layer MLP slicers.

    With ``compare_linear`` the linear-slice estimate on the same data and
    seed is also computed and stored; a generalized value more than three
    combined standard errors below it is logged as a warning.
    """
    _check_dims(data, cfg.k)
    d_x, d_y = data.x.shape[1], data.y.shape[1]

    def make(gen):
        return MlpSlicer(d_x, d_y, cfg.k, slicer_hidden, generator=gen)

    rep = _train(data, cfg, make, "msmi-generalized", checkpoint, {"slicer_hidden": slicer_hidden})
    if compare_linear:
        lin = train_msmi(data, cfg)
        noise = 3.0 * float(np.hypot(rep.extras["eval_std_error"], lin.extras["eval_std_error"]))
        rep.extras["linear_value"] = lin.value_nats
        rep.extras["below_linear"] = bool(rep.value_nats < lin.value_nats - noise)
        if rep.extras["below_linear"]:
            log.warning("generalized estimate %.4f is below the linear-slice estimate %.4f beyond noise %.4f",
                        rep.value_nats, lin.value_nats, noise)
    return rep


def with_epochs(cfg: TrainConfig, epochs: int) -> TrainConfig:
    return replace(cfg, epochs=epochs)
