from pathlib import Path

import pytest

from dvpo.config import (
    TrainConfig,
    config_from_dict,
    config_hash,
    config_to_dict,
    load_config,
    to_toml,
    with_value,
)
from dvpo.errors import ConfigError

DEFAULT_TOML = Path(__file__).resolve().parents[1] / "configs" / "default.toml"


def test_shipped_default_matches_builtin():
    assert load_config(DEFAULT_TOML) == TrainConfig()


def test_default_loss_settings():
    cfg = TrainConfig()
    assert (cfg.critic.m, cfg.critic.n_heads) == (200, 3)
    assert (cfg.loss.alpha, cfg.loss.beta, cfg.loss.huber_delta) == (0.1, 0.1, 1.0)


def test_toml_round_trip(tmp_path):
    cfg = with_value(TrainConfig(), "critic.m", 50)
    p = tmp_path / "c.toml"
    p.write_text(to_toml(cfg))
    assert load_config(p) == cfg


def test_hash_stable_under_key_order():
    d = config_to_dict(TrainConfig())
    shuffled = {k: d[k] for k in reversed(list(d))}
    shuffled["loss"] = {k: d["loss"][k] for k in reversed(list(d["loss"]))}
    assert config_hash(d) == config_hash(shuffled) == config_hash(TrainConfig())
    assert config_hash(with_value(TrainConfig(), "seed", 8)) != config_hash(TrainConfig())


@pytest.mark.parametrize("data,path", [
    ({"loss": {"alpha": "x"}}, "loss.alpha"),
    ({"loss": {"nope": 1}}, "loss.nope"),
    ({"critic": {"m": 2.5}}, "critic.m"),
    ({"algorithm": "sac"}, "algorithm"),
    ({"env": {"flip_prob": 1.5}}, "env.flip_prob"),
    ({"algorithm": "robust_bellman", "critic": {"n_heads": 1}}, "critic.n_heads"),
])
def test_errors_carry_field_path(data, path):
    with pytest.raises(ConfigError) as info:
        config_from_dict(data)
    assert str(info.value).startswith(path)


def test_tails_validated_for_dvpo_only():
    with pytest.raises(ConfigError):
        config_from_dict({"critic": {"m": 5}})
    assert config_from_dict({"algorithm": "ppo", "critic": {"m": 5}}).critic.m == 5


def test_with_value_aliases():
    cfg = with_value(TrainConfig(), "tails.alpha", 0.05)
    assert cfg.loss.alpha == 0.05
    assert with_value(TrainConfig(), "M", 100).critic.m == 100
    with pytest.raises(ConfigError):
        with_value(TrainConfig(), "loss", 1)


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("iterations = = 3")
    with pytest.raises(ConfigError):
        load_config(bad)
