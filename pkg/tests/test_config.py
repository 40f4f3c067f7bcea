import dataclasses
import json

import pytest

from deterra.config import build_experiment, env_from_dict, env_hash, load_config, thread_cap, to_dict
from deterra.errors import ConfigError


@pytest.fixture(autouse=True)
def clean_env(monkeypatch, tmp_path):
    monkeypatch.delenv("DETERRA_CONFIG", raising=False)
    monkeypatch.delenv("DETERRA_THREADS", raising=False)
    monkeypatch.chdir(tmp_path)


def test_desk_profile_defaults():
    cfg = build_experiment({})
    assert cfg.profile == "desk"
    assert (cfg.env.B, cfg.env.U, cfg.env.K, cfg.env.M) == (2, 2, 2, 2)
    assert cfg.ppo.cost_threshold == 0.005
    assert cfg.virtual.alpha_channel == 0.03


def test_profile_then_overrides():
    cfg = build_experiment({"profile": "full", "env": {"B": 1}})
    assert cfg.env.B == 1
    assert cfg.env.U == 3
    assert cfg.dataset_size == 30_000


def test_nested_train_config_overlay_keeps_defaults():
    cfg = build_experiment({"virtual": {"regressor_train": {"lr": 0.5}}})
    assert cfg.virtual.regressor_train.lr == 0.5
    assert cfg.virtual.regressor_train.epochs == 60


@pytest.mark.parametrize(
    "raw",
    [
        {"profile": "huge"},
        {"env": {"bogus": 1}},
        {"env": {"eps": 2.0}},
        {"env": {"N": 70}},
        {"seeds": []},
        {"ppo": {"lambda_init": -1.0}},
        {"virtual": {"alpha_queue": 1.0}},
        {"version": 2},
        {"env": 3},
    ],
)
def test_invalid_configs(raw):
    with pytest.raises(ConfigError):
        build_experiment(raw)


def test_load_yaml_expands_variables(tmp_path, monkeypatch):
    monkeypatch.setenv("RUN_BUCKET", "exp-bucket")
    path = tmp_path / "c.yaml"
    path.write_text("storage:\n  type: s3\n  bucket: ${RUN_BUCKET}\n")
    assert load_config(str(path))["storage"]["bucket"] == "exp-bucket"


def test_load_accepts_json(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"seed": 5}))
    assert build_experiment(load_config(str(path))).seed == 5


def test_env_variable_points_to_config(tmp_path, monkeypatch):
    path = tmp_path / "other.yaml"
    path.write_text("seed: 9\n")
    monkeypatch.setenv("DETERRA_CONFIG", str(path))
    assert load_config() == {"seed": 9}
    monkeypatch.setenv("DETERRA_CONFIG", str(tmp_path / "gone.yaml"))
    with pytest.raises(ConfigError):
        load_config()


def test_local_file_then_empty(tmp_path):
    assert load_config() == {}
    (tmp_path / "deterra.yaml").write_text("seed: 4\n")
    assert load_config() == {"seed": 4}


def test_load_rejects_non_mapping(tmp_path):
    path = tmp_path / "list.yaml"
    path.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(str(path))
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.yaml"))


def test_env_hash_tracks_env_only():
    cfg = build_experiment({})
    h = env_hash(cfg.env)
    assert len(h) == 16
    assert env_hash(build_experiment({"seed": 99}).env) == h
    assert env_hash(dataclasses.replace(cfg.env, arrival_rate=31.0)) != h
    assert env_hash(env_from_dict(to_dict(cfg.env))) == h


def test_thread_cap(monkeypatch):
    assert thread_cap() is None
    monkeypatch.setenv("DETERRA_THREADS", "4")
    assert thread_cap() == 4
    monkeypatch.setenv("DETERRA_THREADS", "many")
    with pytest.raises(ConfigError):
        thread_cap()
