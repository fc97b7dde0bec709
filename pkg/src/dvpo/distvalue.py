"""Quantile-grid bookkeeping and the multi-head quantile ensemble critic."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, ShapeError
from .ndcore import Mlp, mlp_backward_cached, mlp_forward_cached

Array = np.ndarray

# floor(alpha * m) with a guard against products like 0.29 * 100 = 28.999...
_FLOOR_EPS = 1e-9


@dataclass(frozen=True)
class QuantileGrid:
    m: int

    def __post_init__(self):
        if self.m < 1:
            raise ConfigError("number of quantiles must be >= 1", "m")

    @property
    def levels(self) -> Array:
        """tau_j = j / M for j = 1..M."""
        return np.arange(1, self.m + 1, dtype=np.float64) / self.m


@dataclass(frozen=True)
class TailSpec:
    """Lower/upper tail fractions and the resulting tail sizes on an M-grid.

    A fraction of exactly 0 switches that tail off (size 0); any positive
    fraction must select at least one quantile.
    """

    alpha: float
    beta: float
    m: int

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigError("must be >= 0", "tails.alpha")
        if self.beta < 0:
            raise ConfigError("must be >= 0", "tails.beta")
        if self.alpha > 0 and self.k_alpha < 1:
            raise ConfigError(f"floor(alpha*M) = 0 for alpha={self.alpha}, M={self.m}", "tails.alpha")
        if self.beta > 0 and self.k_beta < 1:
            raise ConfigError(f"floor(beta*M) = 0 for beta={self.beta}, M={self.m}", "tails.beta")
        if self.k_alpha + self.k_beta > self.m:
            raise ConfigError("lower and upper tails overlap", "tails")

    @property
    def k_alpha(self) -> int:
        return int(math.floor(self.alpha * self.m + _FLOOR_EPS))

    @property
    def k_beta(self) -> int:
        return int(math.floor(self.beta * self.m + _FLOOR_EPS))

    @property
    def lower(self) -> Array:
        """0-based positions 0..K_alpha-1 (in sorted order)."""
        return np.arange(self.k_alpha)

    @property
    def upper(self) -> Array:
        """0-based positions M-K_beta..M-1 (in sorted order)."""
        return np.arange(self.m - self.k_beta, self.m)


def ensemble_quantiles(heads) -> Array:
    """Per-index mean over heads.

    ``heads`` has shape ``(N, M)`` or batched ``(B, N, M)``; the head axis is
    the second-to-last one.
    """
    h = np.asarray(heads, dtype=np.float64)
    if h.ndim < 2 or h.shape[-2] == 0:
        raise ShapeError("need at least one head")
    return h.mean(axis=-2)


def distribution_mean(q) -> Array | float:
    """Expectation of a quantile vector: mean over the last axis."""
    q = np.asarray(q, dtype=np.float64)
    out = q.mean(axis=-1)
    return float(out) if out.ndim == 0 else out


def sort_permutation(q) -> Array:
    """Stable ascending sort permutation (0-based) along the last axis."""
    return np.argsort(np.asarray(q, dtype=np.float64), axis=-1, kind="stable")


def tail_variance(q, indices) -> float:
    """Population variance of ``q`` over the given positions."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("index set is empty")
    q = np.asarray(q, dtype=np.float64)
    if idx.min() < 0 or idx.max() >= q.shape[-1]:
        raise IndexError("tail index out of range")
    return float(np.var(q[..., idx], axis=-1))


def sorted_tail_variances(q, tails: TailSpec) -> tuple[Array, Array]:
    """Lower/upper tail variances of each row of ``q`` taken in its own sorted order.

    A disabled tail (size 0) reports variance 0.
    """
    s = np.sort(np.asarray(q, dtype=np.float64), axis=-1)
    lo = s[..., tails.lower].var(axis=-1) if tails.k_alpha else np.zeros(s.shape[:-1])
    hi = s[..., tails.upper].var(axis=-1) if tails.k_beta else np.zeros(s.shape[:-1])
    return lo, hi


class CriticNet:
    """Shared tanh backbone feeding N independent quantile heads.

    The backbone ends in a tanh feature layer; each head is a small MLP with
    an identity output of width M. Parameters are drawn backbone-first, then
    head by head, from the supplied generator.
    """

    def __init__(self, backbone: Mlp, heads: Sequence[Mlp], grid: QuantileGrid):
        if not heads:
            raise ConfigError("at least one head is required", "n_heads")
        for h in heads:
            if h.in_dim != backbone.out_dim:
                raise ShapeError("head input does not match backbone output")
            if h.out_dim != grid.m:
                raise ShapeError(f"head emits {h.out_dim} values, grid has M={grid.m}")
        self.backbone = backbone
        self.heads = list(heads)
        self.grid = grid

    @classmethod
    def init(
        cls,
        state_dim: int,
        m: int,
        n_heads: int,
        rng: np.random.Generator,
        backbone_hidden: Sequence[int] = (64, 64),
        head_hidden: Sequence[int] = (32,),
    ) -> "CriticNet":
        backbone = Mlp.init([state_dim, *backbone_hidden], rng, out_activation="tanh")
        heads = [Mlp.init([backbone.out_dim, *head_hidden, m], rng) for _ in range(n_heads)]
        return cls(backbone, heads, QuantileGrid(m))

    @classmethod
    def zeros(cls, state_dim: int, m: int, n_heads: int, backbone_hidden=(64, 64), head_hidden=(32,)) -> "CriticNet":
        backbone = Mlp.zeros([state_dim, *backbone_hidden], out_activation="tanh")
        heads = [Mlp.zeros([backbone.out_dim, *head_hidden, m]) for _ in range(n_heads)]
        return cls(backbone, heads, QuantileGrid(m))

    @property
    def n_heads(self) -> int:
        return len(self.heads)

    @property
    def m(self) -> int:
        return self.grid.m

    @property
    def params(self) -> list[Array]:
        out = list(self.backbone.params)
        for h in self.heads:
            out += h.params
        return out

    def set_params(self, params: Sequence[Array]) -> None:
        nb = len(self.backbone.params)
        self.backbone.set_params(params[:nb])
        pos = nb
        for h in self.heads:
            k = len(h.params)
            h.set_params(params[pos:pos + k])
            pos += k

    def forward_cached(self, states) -> tuple[Array, tuple]:
        """Batched forward: ``(B, N, M)`` quantiles plus a cache for backward."""
        feats, bcache = mlp_forward_cached(self.backbone, states)
        outs, hcaches = [], []
        for h in self.heads:
            o, c = mlp_forward_cached(h, feats)
            outs.append(o)
            hcaches.append(c)
        return np.stack(outs, axis=1), (bcache, hcaches)

    def backward_cached(self, cache: tuple, grad_quantiles: Array) -> list[Array]:
        """Parameter gradients (``params`` order) for upstream ``(B, N, M)``."""
        bcache, hcaches = cache
        grads_heads, dfeat = [], 0.0
        for i, (h, c) in enumerate(zip(self.heads, hcaches)):
            g, dx = mlp_backward_cached(h, c, grad_quantiles[:, i, :])
            grads_heads += g
            dfeat = dfeat + dx
        g_backbone, _ = mlp_backward_cached(self.backbone, bcache, dfeat)
        return g_backbone + grads_heads


def critic_forward(net: CriticNet, state) -> Array:
    """Head outputs for one state ``(N, M)`` or a batch ``(B, N, M)``."""
    x = np.asarray(state, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != net.backbone.in_dim:
        raise ShapeError(f"state shape {x.shape} does not match critic input {net.backbone.in_dim}")
    out, _ = net.forward_cached(x)
    return out[0] if x.ndim == 1 else out
