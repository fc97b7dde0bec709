"""Comparison critics and advantages: scalar PPO critic, pessimistic min-head
critic and critic-free group-relative advantages."""
from __future__ import annotations

import numpy as np

from .distvalue import CriticNet
from .errors import ConfigError, ShapeError
from .ndcore import Mlp, mlp_backward_cached, mlp_forward_cached

Array = np.ndarray


class ScalarCritic:
    """Plain state-value MLP.

    Hidden sizes default to backbone + head of :class:`CriticNet`, and the
    init draws happen in the same layer order, so a one-head, one-quantile
    ``CriticNet`` built from the same generator computes the same function.
    """

    def __init__(self, net: Mlp):
        if net.out_dim != 1:
            raise ShapeError("scalar critic must output a single value")
        self.net = net

    @classmethod
    def init(cls, state_dim: int, rng: np.random.Generator, hidden=(64, 64, 32)) -> "ScalarCritic":
        return cls(Mlp.init([state_dim, *hidden, 1], rng))

    @property
    def params(self) -> list[Array]:
        return self.net.params

    def set_params(self, params) -> None:
        self.net.set_params(params)

    def values(self, states) -> Array:
        return mlp_forward_cached(self.net, states)[0][:, 0]

    def forward_cached(self, states):
        out, acts = mlp_forward_cached(self.net, states)
        return out[:, 0], acts

    def backward_cached(self, acts, grad_values) -> list[Array]:
        grads, _ = mlp_backward_cached(self.net, acts, np.asarray(grad_values)[:, None])
        return grads


class MinHeadCritic:
    """Shared backbone with N scalar heads; the value estimate is the smallest head."""

    def __init__(self, net: CriticNet):
        if net.m != 1:
            raise ShapeError("min-head critic heads must be scalar")
        if net.n_heads < 2:
            raise ConfigError("min-head critic needs at least two heads", "n_heads")
        self.net = net

    @classmethod
    def init(cls, state_dim: int, n_heads: int, rng: np.random.Generator, **sizes) -> "MinHeadCritic":
        return cls(CriticNet.init(state_dim, 1, n_heads, rng, **sizes))

    @property
    def params(self) -> list[Array]:
        return self.net.params

    def set_params(self, params) -> None:
        self.net.set_params(params)

    def head_values(self, states) -> Array:
        """(B, N) head outputs."""
        return self.net.forward_cached(states)[0][:, :, 0]

    def values(self, states) -> Array:
        return min_head_value(self.head_values(states))


def scalar_critic_loss(pred, target) -> tuple[float, Array]:
    """Mean squared error and its gradient w.r.t. ``pred``."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeError("prediction and target differ in shape")
    diff = p - t
    n = max(diff.size, 1)
    return float(np.mean(diff * diff)), 2.0 * diff / n


def min_head_value(heads) -> Array | float:
    """Minimum over the last axis (ties resolve to the lowest head index)."""
    h = np.asarray(heads, dtype=np.float64)
    if h.size == 0 or h.shape[-1] == 0:
        raise ValueError("no heads")
    idx = np.argmin(h, axis=-1)
    out = np.take_along_axis(h, np.expand_dims(idx, -1), axis=-1)[..., 0]
    return float(out) if out.ndim == 0 else out


def robust_bellman_target(r, v_next_min, done, discount: float):
    """r + discount * min-head next value, with no bootstrap at terminal steps."""
    r = np.asarray(r, dtype=np.float64)
    boot = np.where(np.asarray(done, dtype=bool), 0.0, discount * np.asarray(v_next_min, dtype=np.float64))
    out = r + boot
    return float(out) if out.ndim == 0 else out


def grpo_advantage(group_rewards) -> Array:
    """(r - mean) / max(std, 1e-8) with the population std of the group."""
    r = np.asarray(group_rewards, dtype=np.float64)
    if r.ndim != 1 or r.size < 2:
        raise ValueError("a group needs at least two rewards")
    if np.all(r == r[0]):
        return np.zeros_like(r)
    return (r - r.mean()) / max(r.std(), 1e-8)
