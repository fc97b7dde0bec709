"""Training loop shared by DVPO and the baselines.

Each iteration: sample episodes with the current policy, evaluate the critic
on every visited state, build advantages (and critic targets), update the
critic on the frozen targets, then run the PPO actor update. Baselines swap
only the critic/advantage part.

Random streams are derived from the master seed by name (``init-actor``,
``init-critic``, ``policy``, ``shuffle-*``, ``noise``, ``probe``, ``eval``),
so the draws of one stream never depend on how another is used.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .actor import PolicyNet, policy_update
from .baselines import MinHeadCritic, ScalarCritic, grpo_advantage, robust_bellman_target, scalar_critic_loss
from .config import TrainConfig
from .critic_losses import COMPONENTS, LossBreakdown, composite_loss
from .dgae import dist_gae, scalar_advantages
from .distvalue import CriticNet, TailSpec, ensemble_quantiles, sorted_tail_variances
from .envs import NoisySpec, collect_rollouts, evaluate_policy, make_env, sample_visited_states
from .errors import DivergenceError
from .ndcore import Adam, make_rng

log = logging.getLogger(__name__)

Array = np.ndarray

DIVERGENCE_LIMIT = 1e6


@dataclass
class IterationMetrics:
    iteration: int
    mean_true_return: float
    mean_corrupted_return: float
    losses: LossBreakdown
    policy_loss: float
    clip_fraction: float
    entropy: float
    approx_kl: float
    probe_mean: float
    probe_lower_var: float
    probe_upper_var: float
    value_lower_var: float
    value_upper_var: float

    def as_row(self) -> dict[str, float | int]:
        row = asdict(self)
        losses = row.pop("losses")
        out: dict[str, float | int] = {
            "iteration": row.pop("iteration"),
            "mean_true_return": row.pop("mean_true_return"),
            "mean_corrupted_return": row.pop("mean_corrupted_return"),
        }
        out["critic_loss"] = losses["total"]
        for name in COMPONENTS:
            out[f"loss_{name}"] = losses[name]
        out.update(row)
        return out


METRIC_COLUMNS = tuple(
    IterationMetrics(0, 0, 0, LossBreakdown(), 0, 0, 0, 0, 0, 0, 0, 0, 0).as_row().keys()
)


@dataclass
class TrainResult:
    config: TrainConfig
    metrics: list[IterationMetrics]
    policy: PolicyNet
    critic: object | None
    probe_states: Array
    env: object = field(repr=False, default=None)

    def final_true_return(self) -> float:
        return self.metrics[-1].mean_true_return if self.metrics else float("nan")


def noise_seed_for(seed: int) -> int:
    return int(make_rng(seed, "noise").integers(0, 2**62))


def build_env(cfg: TrainConfig):
    spec = NoisySpec(cfg.env.flip_prob, noise_seed_for(cfg.seed))
    if cfg.env.kind == "chain":
        return make_env("chain", spec, length=cfg.env.length, layout_seed=cfg.env.layout_seed)
    return make_env("bandit", spec, n_arms=cfg.env.n_arms)


def build_critic(cfg: TrainConfig, state_dim: int):
    rng = make_rng(cfg.seed, "init-critic")
    c = cfg.critic
    if cfg.algorithm == "dvpo":
        return CriticNet.init(state_dim, c.m, c.n_heads, rng, c.backbone_hidden, c.head_hidden)
    if cfg.algorithm == "ppo":
        return ScalarCritic.init(state_dim, rng, hidden=(*c.backbone_hidden, *c.head_hidden))
    if cfg.algorithm == "robust_bellman":
        return MinHeadCritic.init(state_dim, c.n_heads, rng, backbone_hidden=c.backbone_hidden, head_hidden=c.head_hidden)
    return None


def critic_value_samples(critic, states: Array) -> Array:
    """What each critic reports as its value output, per state.

    DVPO: ensemble quantiles ``(B, M)``; scalar PPO: ``(B, 1)``;
    min-head: the min-head estimate ``(B, 1)``.
    """
    if isinstance(critic, CriticNet):
        return ensemble_quantiles(critic.forward_cached(states)[0])
    if isinstance(critic, MinHeadCritic):
        return critic.values(states)[:, None]
    if isinstance(critic, ScalarCritic):
        return critic.values(states)[:, None]
    return np.zeros((len(states), 1))


def probe_distributions(critic, probe_states: Array, tails: TailSpec | None) -> Array:
    """Per probe state: (mean, lower-tail variance, upper-tail variance).

    Statistics come from the critic's value output per state; scalar critics
    are point masses (both variances 0).
    """
    q = critic_value_samples(critic, probe_states)
    mean = q.mean(axis=1)
    if q.shape[1] == 1 or tails is None:
        zero = np.zeros(len(q))
        return np.stack([mean, zero, zero], axis=1)
    lo, hi = sorted_tail_variances(q, tails)
    return np.stack([mean, lo, hi], axis=1)


def pooled_tail_variances(values, alpha: float, beta: float) -> tuple[float, float]:
    """Tail variances of all value outputs over the probe set, pooled.

    Tail sizes are max(1, floor(frac * n)) of the pooled sample.
    """
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    n = v.size
    ka = max(1, int(math.floor(alpha * n + 1e-9)))
    kb = max(1, int(math.floor(beta * n + 1e-9)))
    return float(v[:ka].var()), float(v[n - kb:].var())


def _next_within_episode(values: Array, dones: Array) -> Array:
    nxt = np.zeros_like(values)
    nxt[:-1] = values[1:]
    nxt[dones] = 0.0
    return nxt


def _check_finite(name: str, value: float, it: int, extra: dict | None = None) -> None:
    if not np.isfinite(value) or abs(value) > DIVERGENCE_LIMIT:
        snapshot = {"iteration": it, "quantity": name, "value": float(value)}
        snapshot.update(extra or {})
        raise DivergenceError(f"{name} diverged at iteration {it}: {value!r}", snapshot)


class Trainer:
    """Owns all mutable training state for one run."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.env = build_env(cfg)
        state_dim = self.env.obs_dim
        self.policy = PolicyNet.init(state_dim, self.env.n_actions, make_rng(cfg.seed, "init-actor"), cfg.actor_hidden)
        self.actor_opt = Adam(self.policy.net, learning_rate=cfg.actor_learning_rate)
        self.critic = build_critic(cfg, state_dim)
        self.critic_opt = None
        if self.critic is not None:
            self.critic_opt = Adam(self.critic, learning_rate=cfg.critic.learning_rate)
        self.rng_policy = make_rng(cfg.seed, "policy")
        self.rng_shuffle_actor = make_rng(cfg.seed, "shuffle-actor")
        self.rng_shuffle_critic = make_rng(cfg.seed, "shuffle-critic")
        self.rng_eval = make_rng(cfg.seed, "eval")
        self.probe_states = sample_visited_states(self.env, self.policy, cfg.n_probe_states, make_rng(cfg.seed, "probe"))
        self.tails = cfg.loss.tails(cfg.critic.m) if cfg.algorithm == "dvpo" else None

    # -- advantages and critic targets -------------------------------------------------

    def _advantages(self, batch):
        cfg = self.cfg
        algo = cfg.algorithm
        if algo == "grpo":
            returns = batch.episode_returns()
            ep_adv = grpo_advantage(returns)
            return ep_adv[batch.step_episode()], None
        if algo == "dvpo":
            heads = self.critic.forward_cached(batch.states)[0]
            dist = dist_gae(ensemble_quantiles(heads), batch.rewards, batch.dones, cfg.gae)
            return scalar_advantages(dist, cfg.normalize_advantages), dist.target_quantiles
        if algo == "ppo":
            v = self.critic.values(batch.states)
            dist = dist_gae(v[:, None], batch.rewards, batch.dones, cfg.gae)
            return scalar_advantages(dist, cfg.normalize_advantages), dist.target_quantiles[:, 0]
        # robust_bellman: GAE over min-head values, heads regress to the one-step min target
        vmin = self.critic.values(batch.states)
        dist = dist_gae(vmin[:, None], batch.rewards, batch.dones, cfg.gae)
        targets = robust_bellman_target(batch.rewards, _next_within_episode(vmin, batch.dones), batch.dones, cfg.gamma)
        return scalar_advantages(dist, cfg.normalize_advantages), np.asarray(targets)

    def _critic_loss_and_grad(self, states: Array, targets: Array):
        cfg = self.cfg
        if cfg.algorithm == "dvpo":
            heads, cache = self.critic.forward_cached(states)
            breakdown, g = composite_loss(heads, targets, cfg.loss, self.critic.grid)
            return breakdown, self.critic.backward_cached(cache, g)
        if cfg.algorithm == "ppo":
            v, acts = self.critic.forward_cached(states)
            loss, g = scalar_critic_loss(v, targets)
            return LossBreakdown(total=loss), self.critic.backward_cached(acts, g)
        heads, cache = self.critic.net.forward_cached(states)
        h = heads[:, :, 0]
        loss, g = scalar_critic_loss(h, np.broadcast_to(targets[:, None], h.shape))
        return LossBreakdown(total=loss), self.critic.net.backward_cached(cache, g[:, :, None])

    def _update_critic(self, batch, targets, it: int) -> LossBreakdown:
        c = self.cfg.critic
        n = len(batch)
        sums = {k: 0.0 for k in LossBreakdown().as_dict()}
        count = 0
        for _ in range(c.epochs):
            order = self.rng_shuffle_critic.permutation(n)
            for start in range(0, n, c.minibatch_size):
                idx = order[start:start + c.minibatch_size]
                breakdown, grads = self._critic_loss_and_grad(batch.states[idx], targets[idx])
                _check_finite("critic_loss", breakdown.total, it, {"losses": breakdown.as_dict()})
                self.critic_opt.step(grads)
                for k, v in breakdown.as_dict().items():
                    sums[k] += v
                count += 1
        return LossBreakdown(**{k: v / count for k, v in sums.items()})

    # -- one iteration -----------------------------------------------------------------

    def iteration(self, it: int) -> IterationMetrics:
        cfg = self.cfg
        batch = collect_rollouts(self.env, self.policy, cfg.episodes_per_iter, self.rng_policy,
                                 episode_offset=it * cfg.episodes_per_iter)
        advantages, targets = self._advantages(batch)
        losses = LossBreakdown()
        if self.critic is not None:
            losses = self._update_critic(batch, targets, it)
        pol = policy_update(self.policy, batch, advantages, cfg.ppo, self.actor_opt, self.rng_shuffle_actor)
        _check_finite("policy_loss", pol["policy_loss"], it)

        true_ret = evaluate_policy(self.env, self.policy, cfg.eval_episodes, self.rng_eval, greedy=True)
        probe = self.probe_stats()
        return IterationMetrics(
            iteration=it,
            mean_true_return=true_ret,
            mean_corrupted_return=float(batch.episode_returns().mean()),
            losses=losses,
            policy_loss=pol["policy_loss"],
            clip_fraction=pol["clip_fraction"],
            entropy=pol["entropy"],
            approx_kl=pol["approx_kl"],
            **probe,
        )

    def probe_stats(self) -> dict[str, float]:
        if self.critic is None:
            return dict.fromkeys(("probe_mean", "probe_lower_var", "probe_upper_var", "value_lower_var", "value_upper_var"), 0.0)
        per_state = probe_distributions(self.critic, self.probe_states, self.tails)
        lo, hi = pooled_tail_variances(critic_value_samples(self.critic, self.probe_states),
                                       self.cfg.loss.alpha, self.cfg.loss.beta)
        return {
            "probe_mean": float(per_state[:, 0].mean()),
            "probe_lower_var": float(per_state[:, 1].mean()),
            "probe_upper_var": float(per_state[:, 2].mean()),
            "value_lower_var": lo,
            "value_upper_var": hi,
        }


def train(cfg: TrainConfig, on_iteration: Callable[[IterationMetrics], None] | None = None) -> TrainResult:
    """Run ``cfg.iterations`` training iterations; deterministic given ``cfg``."""
    trainer = Trainer(cfg)
    metrics: list[IterationMetrics] = []
    for it in range(cfg.iterations):
        m = trainer.iteration(it)
        metrics.append(m)
        if on_iteration is not None:
            on_iteration(m)
        log.debug("iter %d true=%.3f corrupted=%.3f critic=%.4g", it, m.mean_true_return,
                  m.mean_corrupted_return, m.losses.total)
    return TrainResult(cfg, metrics, trainer.policy, trainer.critic, trainer.probe_states, trainer.env)


def head_quantiles(critic, states: Array) -> Array | None:
    """Raw per-head outputs ``(B, N, M)`` for dumping; ``None`` without a critic."""
    if isinstance(critic, CriticNet):
        return critic.forward_cached(states)[0]
    if isinstance(critic, MinHeadCritic):
        return critic.net.forward_cached(states)[0]
    if isinstance(critic, ScalarCritic):
        return critic.values(states)[:, None, None]
    return None
