import json

import pytest

from dvpo.cli import main


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "small.toml"
    p.write_text('iterations = 2\nepisodes_per_iter = 6\nn_probe_states = 4\n'
                 '[env]\nlength = 5\n[critic]\nm = 10\n[loss]\nalpha = 0.2\nbeta = 0.2\n')
    return p


def test_validate_config(small_cfg, capsys):
    assert main(["validate-config", "--config", str(small_cfg)]) == 0
    assert capsys.readouterr().out.startswith("ok ")


def test_invalid_config_exit_2_with_path(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[loss]\nalpha = 0.9\nbeta = 0.9\n")
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "loss" in capsys.readouterr().err
    bad.write_text("[critic]\nm = -1\n")
    assert main(["validate-config", "--config", str(bad)]) == 2
    assert "critic.m" in capsys.readouterr().err


def test_divergence_exit_3(small_cfg, tmp_path, monkeypatch):
    import dvpo.trainer as tr

    monkeypatch.setattr(tr, "DIVERGENCE_LIMIT", 1e-12)
    out = tmp_path / "o"
    assert main(["run", "--config", str(small_cfg), "--out", str(out), "--algo", "ppo"]) == 3
    assert json.loads((out / "divergence.json").read_text())["snapshot"]["quantity"] == "critic_loss"


def test_other_error_exit_1(tmp_path):
    assert main(["plot", str(tmp_path / "empty")]) == 1


def test_run_with_seeds_and_plot(small_cfg, tmp_path):
    out = tmp_path / "o"
    assert main(["run", "--config", str(small_cfg), "--out", str(out), "--seed", "3", "--seed", "4", "--plot"]) == 0
    assert (out / "seed-3" / "learning_curves.png").exists()
    assert json.loads((out / "seed-4" / "manifest.json").read_text())["seeds"] == [4]


def test_sweep_and_compare(small_cfg, tmp_path):
    assert main(["sweep", "--config", str(small_cfg), "--out", str(tmp_path / "s"), "--param", "tails.alpha",
                 "--values", "0,0.1,0.2", "--seed", "1"]) == 0
    assert len((tmp_path / "s" / "summary.csv").read_text().splitlines()) == 5
    assert main(["compare", "--config", str(small_cfg), "--out", str(tmp_path / "c"), "--algo", "dvpo",
                 "--algo", "robust_bellman", "--seed", "1", "--seed", "2"]) == 0
    assert (tmp_path / "c" / "compare.csv").exists()


def test_sweep_without_values_is_config_error(small_cfg, tmp_path):
    assert main(["sweep", "--config", str(small_cfg), "--out", str(tmp_path / "s"), "--param", "alpha"]) == 2


def test_log_level_env(small_cfg, monkeypatch, capsys):
    monkeypatch.setenv("DVPO_LOG_LEVEL", "debug")
    assert main(["validate-config", "--config", str(small_cfg)]) == 0
