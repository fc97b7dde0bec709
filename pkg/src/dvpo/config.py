"""Training/experiment configuration: dataclass tree, TOML loading, hashing.

A config file is TOML with the sections ``[env]``, ``[gae]``, ``[ppo]``,
``[loss]`` and ``[critic]`` plus top-level run keys; see ``configs/default.toml``.
Unknown keys are rejected with their dotted path.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .actor import PpoConfig
from .critic_losses import LossWeights
from .dgae import GaeConfig
from .envs import NoisySpec
from .errors import ConfigError

ALGORITHMS = ("dvpo", "ppo", "robust_bellman", "grpo")

# Short names accepted by sweeps in addition to full dotted paths.
PATH_ALIASES = {
    "tails.alpha": "loss.alpha",
    "tails.beta": "loss.beta",
    "alpha": "loss.alpha",
    "beta": "loss.beta",
    "grid.m": "critic.m",
    "m": "critic.m",
    "M": "critic.m",
    "n": "critic.n_heads",
    "N": "critic.n_heads",
    "flip_prob": "env.flip_prob",
}


@dataclass(frozen=True)
class EnvConfig:
    kind: str = "chain"
    length: int = 16
    n_arms: int = 5
    flip_prob: float = 0.25
    layout_seed: int = 0

    def __post_init__(self):
        if self.kind not in ("chain", "bandit"):
            raise ConfigError(f"unknown environment {self.kind!r}", "env.kind")
        if self.length < 1:
            raise ConfigError("must be >= 1", "env.length")
        if self.n_arms < 2:
            raise ConfigError("must be >= 2", "env.n_arms")
        NoisySpec(self.flip_prob)


@dataclass(frozen=True)
class CriticConfig:
    m: int = 200
    n_heads: int = 3
    backbone_hidden: tuple[int, ...] = (64, 64)
    head_hidden: tuple[int, ...] = (32,)
    learning_rate: float = 1e-3
    epochs: int = 4
    minibatch_size: int = 256

    def __post_init__(self):
        object.__setattr__(self, "backbone_hidden", tuple(self.backbone_hidden))
        object.__setattr__(self, "head_hidden", tuple(self.head_hidden))
        if self.m < 1:
            raise ConfigError("must be >= 1", "critic.m")
        if self.n_heads < 1:
            raise ConfigError("must be >= 1", "critic.n_heads")
        if self.learning_rate < 0:
            raise ConfigError("must be >= 0", "critic.learning_rate")
        if self.epochs < 1:
            raise ConfigError("must be >= 1", "critic.epochs")
        if self.minibatch_size < 1:
            raise ConfigError("must be >= 1", "critic.minibatch_size")
        if not self.backbone_hidden:
            raise ConfigError("need at least one backbone layer", "critic.backbone_hidden")


@dataclass(frozen=True)
class TrainConfig:
    algorithm: str = "dvpo"
    seed: int = 7
    iterations: int = 300
    episodes_per_iter: int = 64
    actor_learning_rate: float = 1e-3
    actor_hidden: tuple[int, ...] = (64, 64)
    normalize_advantages: bool = True
    eval_episodes: int = 8
    n_probe_states: int = 32
    env: EnvConfig = field(default_factory=EnvConfig)
    gae: GaeConfig = field(default_factory=GaeConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    critic: CriticConfig = field(default_factory=CriticConfig)

    def __post_init__(self):
        object.__setattr__(self, "actor_hidden", tuple(self.actor_hidden))
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"must be one of {', '.join(ALGORITHMS)}", "algorithm")
        if self.iterations < 0:
            raise ConfigError("must be >= 0", "iterations")
        if self.episodes_per_iter < 1:
            raise ConfigError("must be >= 1", "episodes_per_iter")
        if self.algorithm == "grpo" and self.episodes_per_iter < 2:
            raise ConfigError("group-relative advantages need >= 2 episodes", "episodes_per_iter")
        if self.actor_learning_rate < 0:
            raise ConfigError("must be >= 0", "actor_learning_rate")
        if self.eval_episodes < 1:
            raise ConfigError("must be >= 1", "eval_episodes")
        if self.n_probe_states < 1:
            raise ConfigError("must be >= 1", "n_probe_states")
        if self.algorithm == "robust_bellman" and self.critic.n_heads < 2:
            raise ConfigError("min-head critic needs >= 2 heads", "critic.n_heads")
        if self.algorithm == "dvpo":
            try:
                self.loss.tails(self.critic.m)
            except ConfigError as exc:
                path = (exc.path or "tails").replace("tails", "loss", 1)
                raise ConfigError(f"{exc.detail} (critic.m = {self.critic.m})", path) from None

    @property
    def gamma(self) -> float:
        return self.gae.discount_gamma


_SECTIONS = {
    "env": EnvConfig,
    "gae": GaeConfig,
    "ppo": PpoConfig,
    "loss": LossWeights,
    "critic": CriticConfig,
}


def _coerce(value: Any, current: Any, path: str) -> Any:
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError("expected true/false", path)
        return value
    if isinstance(current, int):
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError("expected an integer", path)
        return value
    if isinstance(current, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError("expected a number", path)
        return float(value)
    if isinstance(current, tuple):
        if not isinstance(value, (list, tuple)) or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ConfigError("expected a list of integers", path)
        return tuple(value)
    if isinstance(current, str):
        if not isinstance(value, str):
            raise ConfigError("expected a string", path)
        return value
    return value


def _build(cls, data: dict, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError("expected a table", prefix or None)
    defaults = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        path = f"{prefix}.{key}" if prefix else key
        if key not in names:
            raise ConfigError("unknown key", path)
        current = getattr(defaults, key)
        if dataclasses.is_dataclass(current):
            kwargs[key] = _build(type(current), value, path)
        else:
            kwargs[key] = _coerce(value, current, path)
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        if exc.path is None and prefix:
            raise ConfigError(str(exc), prefix) from None
        raise


def config_from_dict(data: dict) -> TrainConfig:
    return _build(TrainConfig, data, "")


def load_config(path: str | Path) -> TrainConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML parse error: {exc}") from None
    return config_from_dict(data)


def config_to_dict(cfg: TrainConfig) -> dict:
    def conv(obj):
        if dataclasses.is_dataclass(obj):
            return {f.name: conv(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
        if isinstance(obj, tuple):
            return list(obj)
        return obj

    return conv(cfg)


def config_hash(cfg: TrainConfig | dict) -> str:
    """sha256 of the canonical (sorted-key) JSON form; insensitive to key order."""
    data = config_to_dict(cfg) if isinstance(cfg, TrainConfig) else cfg
    blob = json.dumps(data, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def resolve_path(path: str) -> str:
    return PATH_ALIASES.get(path, path)


def with_value(cfg: TrainConfig, path: str, value: Any) -> TrainConfig:
    """Copy of ``cfg`` with the dotted ``path`` set to ``value`` (validated)."""
    data = config_to_dict(cfg)
    parts = resolve_path(path).split(".")
    node = data
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ConfigError("does not resolve to a config field", path)
        node = node[p]
    if parts[-1] not in node or isinstance(node[parts[-1]], dict):
        raise ConfigError("does not resolve to a config field", path)
    node[parts[-1]] = value
    return config_from_dict(data)


def to_toml(cfg: TrainConfig) -> str:
    """Render a config as TOML (flat scalars first, then one table per section)."""

    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, str):
            return json.dumps(v)
        if isinstance(v, list):
            return "[" + ", ".join(fmt(x) for x in v) + "]"
        return repr(v)

    data = config_to_dict(cfg)
    lines = [f"{k} = {fmt(v)}" for k, v in data.items() if not isinstance(v, dict)]
    for k, v in data.items():
        if isinstance(v, dict):
            lines.append("")
            lines.append(f"[{k}]")
            lines += [f"{kk} = {fmt(vv)}" for kk, vv in v.items()]
    return "\n".join(lines) + "\n"
