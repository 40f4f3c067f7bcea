import copy

import pytest

from deterra.config import build_experiment
from deterra.mathcore import make_rng
from deterra.storage import FSStorage

TINY = {
    "env": {"B": 1, "U": 1, "K": 1, "M": 2, "horizon": 10, "arrival_rate": 3.0},
    "dataset_size": 400,
    "seeds": [3, 4],
    "pretrain_episodes": 4,
    "finetune_episodes": 2,
    "eval_episodes": 3,
    "checkpoint_every": 2,
    "snapshot_eval_episodes": 2,
    "ppo": {"hidden": [16], "update_epochs": 2, "minibatch_size": 32, "episodes_per_update": 2},
    "virtual": {
        "init_components": 2,
        "transition_components": 2,
        "latent_dim": 2,
        "vae_hidden": [16],
        "kan_hidden": [4],
        "grid_size": 4,
        "mae_draws": 2,
        "regressor_train": {"lr": 1e-2, "epochs": 3, "batch_size": 64},
        "vae_train": {"lr": 1e-2, "epochs": 3, "batch_size": 64, "loss": "nll"},
    },
    "halfmoons": {"components": 4, "draws_per_condition": 50, "train": {"lr": 3e-3, "epochs": 5, "batch_size": 64, "loss": "nll"}},
}


@pytest.fixture
def tiny_raw():
    return copy.deepcopy(TINY)


@pytest.fixture
def tiny_cfg():
    return build_experiment(TINY)


@pytest.fixture
def storage(tmp_path):
    return FSStorage(base_dir=str(tmp_path / "runs"))


@pytest.fixture
def rng():
    return make_rng(1234)
