"""Discrete softmax policy and the PPO clipped-surrogate update."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError, ShapeError
from .ndcore import Adam, Mlp, mlp_backward_cached, mlp_forward_cached

Array = np.ndarray


@dataclass(frozen=True)
class PpoConfig:
    clip_epsilon: float = 0.2
    entropy_coef: float = 0.03
    epochs_per_batch: int = 4
    minibatch_size: int = 256

    def __post_init__(self):
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ConfigError("must lie in (0, 1)", "ppo.clip_epsilon")
        if self.entropy_coef < 0:
            raise ConfigError("must be >= 0", "ppo.entropy_coef")
        if self.epochs_per_batch < 1:
            raise ConfigError("must be >= 1", "ppo.epochs_per_batch")
        if self.minibatch_size < 1:
            raise ConfigError("must be >= 1", "ppo.minibatch_size")


class PolicyNet:
    def __init__(self, net: Mlp):
        if net.out_dim < 2:
            raise ConfigError("policy needs at least two actions", "env")
        self.net = net

    @classmethod
    def init(cls, state_dim: int, action_count: int, rng: np.random.Generator, hidden=(64, 64)) -> "PolicyNet":
        return cls(Mlp.init([state_dim, *hidden, action_count], rng, out_scale=0.01))

    @property
    def action_count(self) -> int:
        return self.net.out_dim

    def logits(self, states) -> Array:
        return mlp_forward_cached(self.net, states)[0]


def log_softmax(logits: Array) -> Array:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def action_distribution(policy: PolicyNet, state) -> Array:
    """Softmax action probabilities for one state ``(A,)`` or a batch ``(B, A)``."""
    x = np.asarray(state, dtype=np.float64)
    if x.shape[-1] != policy.net.in_dim:
        raise ShapeError(f"state shape {x.shape} does not match policy input {policy.net.in_dim}")
    probs = np.exp(log_softmax(policy.logits(x)))
    return probs[0] if x.ndim == 1 else probs


def ppo_clip_loss(new_logprob, old_logprob, advantage, cfg: PpoConfig, entropy=None) -> tuple[float, Array]:
    """Negative clipped surrogate (minus the entropy bonus when ``entropy`` is given).

    Returns the loss and its gradient w.r.t. ``new_logprob``; ``old_logprob``
    and ``advantage`` are constants.
    """
    new = np.asarray(new_logprob, dtype=np.float64)
    old = np.asarray(old_logprob, dtype=np.float64)
    adv = np.asarray(advantage, dtype=np.float64)
    if not new.shape == old.shape == adv.shape:
        raise ShapeError("log-probs and advantages must be aligned")
    with np.errstate(over="ignore"):
        ratio = np.exp(new - old)
    if not np.all(np.isfinite(ratio)):
        raise NumericError("non-finite importance ratio")
    eps = cfg.clip_epsilon
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
    b = new.size
    loss = -float(np.minimum(unclipped, clipped).mean())
    # unclipped branch wins ties; the clipped branch is flat in new_logprob
    grad = np.where(unclipped <= clipped, -unclipped / b, 0.0)
    if entropy is not None:
        loss -= cfg.entropy_coef * float(np.mean(entropy))
    return loss, grad


def clip_fraction(new_logprob, old_logprob, eps: float) -> float:
    ratio = np.exp(np.asarray(new_logprob) - np.asarray(old_logprob))
    return float(np.mean(np.abs(ratio - 1.0) > eps))


def policy_update(
    policy: PolicyNet,
    batch,
    advantages,
    cfg: PpoConfig,
    optimizer: Adam,
    rng: np.random.Generator,
) -> dict[str, float]:
    """``epochs_per_batch`` passes of shuffled minibatch PPO steps, in place.

    ``batch`` needs ``states``, ``actions`` and ``logprobs`` arrays.
    Returns mean loss, clip fraction, entropy and approximate KL.
    """
    adv = np.asarray(advantages, dtype=np.float64)
    n = len(batch.actions)
    if adv.shape != (n,):
        raise ShapeError("advantages not aligned with batch")
    losses, clips, ents, kls = [], [], [], []
    for _ in range(cfg.epochs_per_batch):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            idx = order[start:start + cfg.minibatch_size]
            states = batch.states[idx]
            actions = batch.actions[idx]
            old = batch.logprobs[idx]
            logits, acts = mlp_forward_cached(policy.net, states)
            logp_all = log_softmax(logits)
            probs = np.exp(logp_all)
            rows = np.arange(len(idx))
            new = logp_all[rows, actions]
            entropy = -(probs * logp_all).sum(axis=1)
            loss, g_new = ppo_clip_loss(new, old, adv[idx], cfg, entropy)
            if not np.isfinite(loss):
                raise NumericError("non-finite policy loss")

            onehot = np.zeros_like(probs)
            onehot[rows, actions] = 1.0
            g_logits = g_new[:, None] * (onehot - probs)
            if cfg.entropy_coef:
                dH = -probs * (logp_all + entropy[:, None])
                g_logits -= cfg.entropy_coef / len(idx) * dH
            grads, _ = mlp_backward_cached(policy.net, acts, g_logits)
            optimizer.step(grads)

            losses.append(loss)
            clips.append(clip_fraction(new, old, cfg.clip_epsilon))
            ents.append(float(entropy.mean()))
            kls.append(float(np.mean(old - new)))
    return {
        "policy_loss": float(np.mean(losses)),
        "clip_fraction": float(np.mean(clips)),
        "entropy": float(np.mean(ents)),
        "approx_kl": float(np.mean(kls)),
    }
