"""Tiny episodic tasks whose terminal reward is corrupted by Bernoulli flips.

Corruption for episode ``e`` is drawn from a stream keyed only by
``(noise_seed, e)``, so every algorithm run with the same seed sees the same
flips on the same episode indices.

The uncorrupted outcome is only reachable through :func:`evaluate_policy`;
:func:`collect_rollouts` hands the learner corrupted rewards only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .actor import action_distribution
from .errors import ConfigError
from .ndcore import make_rng

Array = np.ndarray


@dataclass(frozen=True)
class NoisySpec:
    flip_prob: float = 0.25
    noise_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.flip_prob < 1.0:
            raise ConfigError("must lie in [0, 1)", "env.flip_prob")


def is_corrupted(spec: NoisySpec, episode_index: int) -> bool:
    if spec.flip_prob == 0.0:
        return False
    return bool(make_rng(spec.noise_seed, "reward-noise", episode_index).random() < spec.flip_prob)


class ChainState(NamedTuple):
    position: int
    n_correct: int


class NoisyBandit:
    """K-armed bandit, one step per episode; arm k pays (2k+1)/(2K).

    With probability ``flip_prob`` the payout r is reported as 1 - r.
    """

    horizon = 1

    def __init__(self, spec: NoisySpec, n_arms: int = 5):
        if n_arms < 2:
            raise ConfigError("need at least two arms", "env.n_arms")
        self.spec = spec
        self.n_arms = n_arms
        self.arm_means = (2.0 * np.arange(n_arms) + 1.0) / (2.0 * n_arms)

    obs_dim = 1

    @property
    def n_actions(self) -> int:
        return self.n_arms

    def initial_state(self) -> int:
        return 0

    def observe(self, state) -> Array:
        return np.ones(1)

    def _transition(self, state, action: int):
        if not 0 <= action < self.n_arms:
            raise ValueError(f"action {action} out of range for {self.n_arms} arms")
        return state, float(self.arm_means[action]), True

    def step(self, state, action: int, episode_index: int):
        nxt, r, done = self._transition(state, action)
        if is_corrupted(self.spec, episode_index):
            r = 1.0 - r
        return nxt, r, done


class ChainMDP:
    """Length-T chain with one correct action per position.

    The episode always lasts T steps. Reward is 0 until the last step, which
    pays 1 if at least ceil(0.8 T) actions were correct, else 0; that outcome
    is swapped (0 <-> 1) with probability ``flip_prob``.

    Observation: one-hot position, position parity, parity of the number of
    correct actions taken so far.
    """

    def __init__(self, spec: NoisySpec, length: int = 16, layout_seed: int = 0, success_frac: float = 0.8):
        if length < 1:
            raise ConfigError("must be >= 1", "env.length")
        self.spec = spec
        self.length = length
        self.threshold = math.ceil(success_frac * length - 1e-9)
        self.correct_actions = make_rng(layout_seed, "chain-layout").integers(0, 2, size=length)

    n_actions = 2

    @property
    def horizon(self) -> int:
        return self.length

    @property
    def obs_dim(self) -> int:
        return self.length + 2

    def initial_state(self) -> ChainState:
        return ChainState(0, 0)

    def observe(self, state: ChainState) -> Array:
        obs = np.zeros(self.obs_dim)
        if state.position < self.length:
            obs[state.position] = 1.0
        obs[self.length] = state.position % 2
        obs[self.length + 1] = state.n_correct % 2
        return obs

    def _transition(self, state: ChainState, action: int):
        if action not in (0, 1):
            raise ValueError(f"invalid action {action}")
        if state.position >= self.length:
            raise ValueError("episode already finished")
        hit = int(action == self.correct_actions[state.position])
        nxt = ChainState(state.position + 1, state.n_correct + hit)
        done = nxt.position == self.length
        reward = float(nxt.n_correct >= self.threshold) if done else 0.0
        return nxt, reward, done

    def step(self, state: ChainState, action: int, episode_index: int):
        nxt, r, done = self._transition(state, action)
        if done and is_corrupted(self.spec, episode_index):
            r = 1.0 - r
        return nxt, r, done


def noisy_bandit_step(action: int, spec: NoisySpec, episode_index: int = 0, n_arms: int = 5) -> float:
    return NoisyBandit(spec, n_arms).step(0, action, episode_index)[1]


def chain_mdp_step(state: ChainState, action: int, spec: NoisySpec, episode_index: int = 0, env: ChainMDP | None = None):
    env = env or ChainMDP(spec)
    return env.step(state, action, episode_index)


def make_env(kind: str, spec: NoisySpec, **kwargs):
    if kind == "chain":
        return ChainMDP(spec, **kwargs)
    if kind == "bandit":
        return NoisyBandit(spec, **kwargs)
    raise ConfigError(f"unknown environment {kind!r}", "env.kind")


@dataclass
class Episode:
    states: Array
    actions: Array
    rewards: Array
    dones: Array
    true_reward: float


@dataclass
class TrajectoryBatch:
    """Episodes concatenated step-wise, episode-major.

    ``episode_starts[k]`` is the first step of episode k; ``logprobs`` are
    the behaviour policy's log-probabilities at collection time.
    """

    states: Array
    actions: Array
    rewards: Array
    dones: Array
    logprobs: Array
    episode_ids: Array
    episode_starts: Array = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def n_episodes(self) -> int:
        return len(self.episode_starts)

    def episode_returns(self) -> Array:
        return np.add.reduceat(self.rewards, self.episode_starts)

    def step_episode(self) -> Array:
        """Per step, the position (0..n_episodes-1) of its episode in the batch."""
        out = np.zeros(len(self), dtype=np.int64)
        out[self.episode_starts[1:]] = 1
        return np.cumsum(out)


def _run_lockstep(env, policy, n_episodes: int, rng: np.random.Generator, episode_offset: int, greedy: bool, corrupt: bool):
    """Play episodes side by side; one batched policy call per time step."""
    states = [env.initial_state() for _ in range(n_episodes)]
    active = list(range(n_episodes))
    traj = [([], [], [], [], []) for _ in range(n_episodes)]
    clean = np.zeros(n_episodes)
    while active:
        obs = np.stack([env.observe(states[k]) for k in active])
        probs = action_distribution(policy, obs)
        if greedy:
            actions = probs.argmax(axis=1)
        else:
            u = rng.random(len(active))
            cdf = np.cumsum(probs, axis=1)
            actions = np.minimum((u[:, None] >= cdf).sum(axis=1), probs.shape[1] - 1)
        still = []
        for row, k in enumerate(active):
            a = int(actions[row])
            nxt, r_clean, done = env._transition(states[k], a)
            r = r_clean
            if corrupt and done and is_corrupted(env.spec, episode_offset + k):
                r = 1.0 - r_clean
            clean[k] += r_clean
            s, acts, rews, dns, lps = traj[k]
            s.append(obs[row])
            acts.append(a)
            rews.append(r)
            dns.append(done)
            lps.append(math.log(probs[row, a]))
            states[k] = nxt
            if not done:
                still.append(k)
        active = still
    return traj, clean


def collect_rollouts(env, policy, n_episodes: int, rng: np.random.Generator, episode_offset: int = 0) -> TrajectoryBatch:
    """Sample ``n_episodes`` complete episodes with the stochastic policy.

    Episode k of this call uses noise index ``episode_offset + k``.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    traj, _ = _run_lockstep(env, policy, n_episodes, rng, episode_offset, greedy=False, corrupt=True)
    lengths = np.array([len(t[1]) for t in traj])
    starts = np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(np.int64)
    return TrajectoryBatch(
        states=np.concatenate([np.stack(t[0]) for t in traj]),
        actions=np.concatenate([t[1] for t in traj]).astype(np.int64),
        rewards=np.concatenate([t[2] for t in traj]).astype(np.float64),
        dones=np.concatenate([t[3] for t in traj]).astype(bool),
        logprobs=np.concatenate([t[4] for t in traj]).astype(np.float64),
        episode_ids=np.repeat(episode_offset + np.arange(n_episodes), lengths),
        episode_starts=starts,
    )


def play_episodes(env, policy, n_episodes: int, rng: np.random.Generator, greedy: bool = True, episode_offset: int = 0) -> list[Episode]:
    """Full episode records including the uncorrupted outcome (evaluation only)."""
    traj, clean = _run_lockstep(env, policy, n_episodes, rng, episode_offset, greedy, corrupt=True)
    return [
        Episode(np.stack(s), np.array(a), np.array(r), np.array(d), float(c))
        for (s, a, r, d, _), c in zip(traj, clean)
    ]


def evaluate_policy(env, policy, n_episodes: int, rng: np.random.Generator, greedy: bool = True) -> float:
    """Mean uncorrupted return; greedy (argmax) actions unless ``greedy=False``."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    _, clean = _run_lockstep(env, policy, n_episodes, rng, 0, greedy, corrupt=False)
    return float(clean.mean())


def sample_visited_states(env, policy, n_states: int, rng: np.random.Generator) -> Array:
    """Observations drawn uniformly from states visited by ``policy``."""
    n_eps = max(1, math.ceil(n_states / env.horizon))
    traj, _ = _run_lockstep(env, policy, n_eps, rng, 0, greedy=False, corrupt=False)
    pool = np.concatenate([np.stack(t[0]) for t in traj])
    pick = rng.choice(len(pool), size=n_states, replace=len(pool) < n_states)
    return pool[np.sort(pick)]

