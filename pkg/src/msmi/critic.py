"""MLP critics for the Donsker-Varadhan objective, slicers, and JSON
checkpoints."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import DimensionMismatch, RankDeficient, WrongArchitecture

_ACTIVATIONS = {"elu": nn.functional.elu, "relu": nn.functional.relu}


def xavier_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


class Mlp(nn.Module):
    """Fully connected net; every layer but the last is followed by ``activation``.

    Hidden weights are drawn uniformly in ``+-sqrt(6 / (fan_in + fan_out))``,
    biases start at zero, and the output layer starts at zero unless
    ``zero_output=False``.
    """

    def __init__(self, dims, activation="elu", *, zero_output=True, generator=None, dtype=torch.float64):
        super().__init__()
        if len(dims) < 2:
            raise ValueError("an MLP needs at least input and output dimensions")
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.dims = list(dims)
        self.activation = activation
        self.layers = nn.ModuleList(nn.Linear(i, o, dtype=dtype) for i, o in zip(dims[:-1], dims[1:]))
        with torch.no_grad():
            for idx, layer in enumerate(self.layers):
                layer.bias.zero_()
                if idx == len(self.layers) - 1 and zero_output:
                    layer.weight.zero_()
                else:
                    bound = xavier_bound(layer.in_features, layer.out_features)
                    layer.weight.uniform_(-bound, bound, generator=generator)

    def forward(self, x):
        act = _ACTIVATIONS[self.activation]
        for layer in self.layers[:-1]:
            x = act(layer(x))
        return self.layers[-1](x)


class ShallowReluCritic(nn.Module):
    """``f(z) = sum_i beta_i relu(<w_i, z> + b_i) + <w0, z> + b0`` on ``z = (u, v)``."""

    def __init__(self, k: int, ell: int, *, generator=None, dtype=torch.float64):
        super().__init__()
        self.k, self.ell = k, ell
        self.hidden = nn.Linear(2 * k, ell, dtype=dtype)
        self.beta = nn.Linear(ell, 1, bias=False, dtype=dtype)
        self.skip = nn.Linear(2 * k, 1, dtype=dtype)
        with torch.no_grad():
            bound = xavier_bound(2 * k, ell)
            self.hidden.weight.uniform_(-bound, bound, generator=generator)
            self.hidden.bias.zero_()
            self.beta.weight.zero_()
            self.skip.weight.zero_()
            self.skip.bias.zero_()

    def forward(self, z):
        return self.beta(torch.relu(self.hidden(z))) + self.skip(z)


class CriticModel(nn.Module):
    """DV potential on projected pairs ``(u, v)`` in ``R^k x R^k``.

    ``kind`` is ``"separable"`` (score ``<h1(u), h2(v)>``), ``"joint"`` (one
    MLP on the concatenation) or ``"shallow"`` (the bounded one-hidden-layer
    ReLU class used in theory mode).
    """

    def __init__(self, kind: str, k: int, *, hidden=(256, 256), embed_dim=32, activation="elu", ell=None,
                 generator=None, dtype=torch.float64):
        super().__init__()
        self.kind, self.k = kind, k
        if kind == "separable":
            self.h1 = Mlp([k, *hidden, embed_dim], activation, zero_output=False, generator=generator, dtype=dtype)
            # zeroing one tower keeps the initial score at 0 without killing the gradient
            self.h2 = Mlp([k, *hidden, embed_dim], activation, zero_output=True, generator=generator, dtype=dtype)
        elif kind == "joint":
            self.net = Mlp([2 * k, *hidden, 1], activation, generator=generator, dtype=dtype)
        elif kind == "shallow":
            if ell is None:
                raise ValueError("shallow critic needs ell")
            self.net = ShallowReluCritic(k, ell, generator=generator, dtype=dtype)
        else:
            raise ValueError(f"unknown critic kind {kind!r}")

    def pair_scores(self, u, v, perm):
        """Scores of the aligned pairs and of the pairs ``(u_i, v_perm[i])``."""
        if u.shape[-1] != self.k or v.shape[-1] != self.k:
            raise DimensionMismatch(f"critic expects inputs of width {self.k}")
        if self.kind == "separable":
            a, b = self.h1(u), self.h2(v)
            return (a * b).sum(dim=1), (a * b[perm]).sum(dim=1)
        joint = self.net(torch.cat([u, v], dim=1)).squeeze(1)
        product = self.net(torch.cat([u, v[perm]], dim=1)).squeeze(1)
        return joint, product

    def forward(self, u, v):
        if u.shape[-1] != self.k or v.shape[-1] != self.k:
            raise DimensionMismatch(f"critic expects inputs of width {self.k}")
        if self.kind == "separable":
            return (self.h1(u) * self.h2(v)).sum(dim=-1)
        return self.net(torch.cat([u, v], dim=-1)).squeeze(-1)


def critic_eval(critic: CriticModel, u, v):
    """Critic score of one pair (or a batch of pairs) as float(s)."""
    p = next(critic.parameters())
    ut = torch.as_tensor(np.asarray(u, dtype=np.float64), dtype=p.dtype)
    vt = torch.as_tensor(np.asarray(v, dtype=np.float64), dtype=p.dtype)
    single = ut.ndim == 1
    if single:
        ut, vt = ut[None], vt[None]
    with torch.no_grad():
        out = critic(ut, vt).numpy().astype(np.float64)
    return float(out[0]) if single else out


def theory_scale(ell: int) -> float:
    """``a_ell = max(log log ell, 1)``."""
    if ell <= math.e:
        return 1.0
    return max(math.log(math.log(ell)), 1.0)


@torch.no_grad()
def theory_clip(critic: CriticModel, ell: int) -> CriticModel:
    """Project a shallow ReLU critic onto the bounded parameter class in place.

    Hidden rows get ``max(|w_i|_1, |b_i|) <= 1``, output weights
    ``|beta_i| <= a/(2 ell)``, skip weights ``|w0|_1 <= a`` and ``|b0| <= a``.
    """
    if critic.kind != "shallow" or not isinstance(critic.net, ShallowReluCritic) or critic.net.ell != ell:
        raise WrongArchitecture(f"theory_clip needs a shallow joint ReLU critic with {ell} hidden units")
    net = critic.net
    a = theory_scale(ell)
    w, b = net.hidden.weight, net.hidden.bias
    size = torch.maximum(w.abs().sum(dim=1), b.abs())
    scale = torch.where(size > 1.0, 1.0 / size, torch.ones_like(size))
    w.mul_(scale[:, None])
    b.mul_(scale)
    net.beta.weight.clamp_(-a / (2 * ell), a / (2 * ell))
    w0_norm = float(net.skip.weight.abs().sum())
    if w0_norm > a:
        net.skip.weight.mul_(a / w0_norm)
    net.skip.bias.clamp_(-a, a)
    return critic


# --- slicers ---------------------------------------------------------------


class StiefelQR(torch.autograd.Function):
    """Q factor of a thin QR with nonnegative R diagonal, with the exact
    reverse-mode rule ``dA = (dQ + Q copyltu(-dQ^T Q)) R^{-T}``."""

    @staticmethod
    def forward(ctx, m):
        q, r = torch.linalg.qr(m, mode="reduced")
        signs = torch.where(torch.diagonal(r) < 0, -1.0, 1.0).to(m.dtype)
        q = q * signs
        r = r * signs[:, None]
        ctx.save_for_backward(q, r)
        return q

    @staticmethod
    def backward(ctx, grad_q):
        q, r = ctx.saved_tensors
        m = -grad_q.T @ q
        lower = torch.tril(m, -1)
        sym = lower + lower.T + torch.diag(torch.diagonal(m))
        b = grad_q + q @ sym
        # b @ R^{-T}, i.e. solve X R^T = b
        return torch.linalg.solve_triangular(r, b.T, upper=True).T


class FiniteDiffQR(torch.autograd.Function):
    """Same forward map with a central-difference backward (step ``1e-5``)."""

    STEP = 1e-5

    @staticmethod
    def forward(ctx, m):
        ctx.save_for_backward(m)
        return _q_positive(m)

    @staticmethod
    def backward(ctx, grad_q):
        (m,) = ctx.saved_tensors
        grad = torch.zeros_like(m)
        h = FiniteDiffQR.STEP
        for i in range(m.shape[0]):
            for j in range(m.shape[1]):
                plus, minus = m.clone(), m.clone()
                plus[i, j] += h
                minus[i, j] -= h
                grad[i, j] = ((_q_positive(plus) - _q_positive(minus)) * grad_q).sum() / (2 * h)
        return grad


def _q_positive(m):
    q, r = torch.linalg.qr(m, mode="reduced")
    return q * torch.where(torch.diagonal(r) < 0, -1.0, 1.0).to(m.dtype)


def _rank_ok(m: torch.Tensor) -> bool:
    s = torch.linalg.svdvals(m.detach())
    return bool(s[0] > 0 and s[-1] > 1e-12 * s[0])


class LinearSlicer(nn.Module):
    """Stiefel slices ``(A, B)`` parameterized by unconstrained raw matrices."""

    kind = "linear"

    def __init__(self, d_x: int, d_y: int, k: int, *, init_scale=0.1, qr_grad="exact", generator=None,
                 fixed=None):
        super().__init__()
        if qr_grad not in ("exact", "finite-difference"):
            raise ValueError(f"unknown qr_grad {qr_grad!r}")
        self.d_x, self.d_y, self.k = d_x, d_y, k
        self.init_scale = init_scale
        self.qr_grad = qr_grad
        self.generator = generator
        self.reinitialized = 0
        if fixed is not None:
            a, b = (torch.as_tensor(np.asarray(s), dtype=torch.float64) for s in fixed)
            self.raw_a = nn.Parameter(a, requires_grad=False)
            self.raw_b = nn.Parameter(b, requires_grad=False)
        else:
            self.raw_a = nn.Parameter(init_scale * torch.randn(d_x, k, generator=generator, dtype=torch.float64))
            self.raw_b = nn.Parameter(init_scale * torch.randn(d_y, k, generator=generator, dtype=torch.float64))

    def _project(self, raw: nn.Parameter):
        if not _rank_ok(raw):
            with torch.no_grad():
                raw.copy_(self.init_scale * torch.randn(raw.shape, generator=self.generator, dtype=raw.dtype))
            self.reinitialized += 1
            if not _rank_ok(raw):
                raise RankDeficient("re-randomized slice matrix is still rank deficient")
        fn = StiefelQR if self.qr_grad == "exact" else FiniteDiffQR
        return fn.apply(raw)

    def slices(self):
        return self._project(self.raw_a), self._project(self.raw_b)

    def forward(self, x, y):
        a, b = self.slices()
        return x @ a, y @ b


class MlpSlicer(nn.Module):
    """Nonlinear slicers ``g: R^{d_x} -> R^k`` and ``h: R^{d_y} -> R^k``."""

    kind = "mlp"

    def __init__(self, d_x: int, d_y: int, k: int, hidden: int = 32, *, generator=None):
        super().__init__()
        self.d_x, self.d_y, self.k, self.hidden = d_x, d_y, k, hidden
        self.g = Mlp([d_x, hidden, k], "elu", zero_output=False, generator=generator)
        self.h = Mlp([d_y, hidden, k], "elu", zero_output=False, generator=generator)

    def forward(self, x, y):
        return self.g(x), self.h(y)


# --- checkpoints -------------------------------------------------------------


def _state_to_lists(module: nn.Module) -> dict:
    return {name: t.detach().cpu().to(torch.float64).tolist() for name, t in module.state_dict().items()}


def save_checkpoint(path, critic: CriticModel, slicer: nn.Module, config: dict) -> None:
    """Write parameters as nested JSON arrays plus a config echo.

    Floats are written in shortest round-trip form, so reloading restores
    every parameter bit for bit.
    """
    doc = {
        "schema": 1,
        "config": config,
        "critic": {"kind": critic.kind, "k": critic.k, "state": _state_to_lists(critic)},
        "slicer": {"kind": slicer.kind, "state": _state_to_lists(slicer)},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_state(module: nn.Module, state: dict) -> None:
    current = module.state_dict()
    module.load_state_dict({name: torch.tensor(vals, dtype=current[name].dtype) for name, vals in state.items()})


def read_checkpoint(path) -> dict:
    return json.loads(Path(path).read_text())
