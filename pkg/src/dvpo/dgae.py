"""Generalized advantage estimation lifted elementwise to quantile vectors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError

Array = np.ndarray


@dataclass(frozen=True)
class GaeConfig:
    discount_gamma: float = 0.99
    lam: float = 0.95

    def __post_init__(self):
        if not 0.0 < self.discount_gamma <= 1.0:
            raise ConfigError("must lie in (0, 1]", "gae.discount_gamma")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError("must lie in [0, 1]", "gae.lam")


@dataclass
class DistAdvantage:
    """Per-step advantage quantiles, target-return quantiles and scalar advantages.

    Arrays are stacked over time: ``adv_quantiles`` and ``target_quantiles``
    are ``(T, M)``, ``scalar_adv`` is ``(T,)``.
    """

    adv_quantiles: Array
    target_quantiles: Array
    scalar_adv: Array

    def __len__(self) -> int:
        return self.adv_quantiles.shape[0]


def dist_td_error(r_t: float, v_next, v_t, done: bool, cfg: GaeConfig) -> Array:
    """r + gamma * v_next - v_t, with the bootstrap dropped at terminal steps."""
    v_next = np.asarray(v_next, dtype=np.float64)
    v_t = np.asarray(v_t, dtype=np.float64)
    if v_next.shape != v_t.shape:
        raise ShapeError(f"value vectors differ in shape: {v_next.shape} vs {v_t.shape}")
    boot = 0.0 if done else cfg.discount_gamma
    return r_t + boot * v_next - v_t


def dist_gae(values, rewards, dones, cfg: GaeConfig, next_values=None, truncated=None) -> DistAdvantage:
    """Backward GAE recursion on quantile vectors.

    values:      (T, M) critic quantiles at each visited state (treated as constants)
    rewards:     (T,)
    dones:       (T,) terminal flags; bootstrap is zero and the recursion restarts
    next_values: (T, M) bootstrap values; defaults to ``values`` shifted by one
                 step with zeros after the last step
    truncated:   (T,) non-terminal episode ends; the recursion restarts but the
                 bootstrap from ``next_values`` is kept
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim == 1:
        v = v[:, None]
    r = np.asarray(rewards, dtype=np.float64)
    d = np.asarray(dones, dtype=bool)
    T = v.shape[0]
    if T == 0:
        raise ValueError("empty trajectory")
    if r.shape != (T,) or d.shape != (T,):
        raise ShapeError("rewards/dones must be aligned with values")
    if next_values is None:
        nv = np.zeros_like(v)
        nv[:-1] = v[1:]
    else:
        nv = np.asarray(next_values, dtype=np.float64).reshape(v.shape)
    cut = d.copy()
    if truncated is not None:
        cut |= np.asarray(truncated, dtype=bool)

    g, gl = cfg.discount_gamma, cfg.discount_gamma * cfg.lam
    adv = np.zeros_like(v)
    running = np.zeros(v.shape[1])
    for t in range(T - 1, -1, -1):
        if cut[t]:
            running = np.zeros(v.shape[1])
        boot = 0.0 if d[t] else g
        delta = r[t] + boot * nv[t] - v[t]
        running = delta + gl * running
        adv[t] = running
    return DistAdvantage(adv, v + adv, adv.mean(axis=1))


def scalar_advantages(advs: DistAdvantage | Array, normalize: bool = False) -> Array:
    """Expectation of each advantage distribution, optionally batch-standardized."""
    if isinstance(advs, DistAdvantage):
        a = advs.scalar_adv.copy()
    else:
        a = np.asarray(advs, dtype=np.float64)
        a = a.mean(axis=1) if a.ndim == 2 else a.copy()
    if a.size == 0:
        raise ValueError("no advantages")
    if normalize:
        a = (a - a.mean()) / max(a.std(), 1e-8)
    return a
