import csv
import dataclasses
import json
import os

import numpy as np
import pytest
import yaml

from deterra.bench import BENCH_SIZES, bench_rows, ea_cgmm_ops, kan_ops, mlp_ops
from deterra.errors import ArtifactError
from deterra.main import EXIT_CONFIG, EXIT_ERROR, EXIT_OK, main
from deterra.nn import KanSpec, MlpSpec
from deterra.pipeline import (
    DATASET_KEY,
    cmd_collect,
    cmd_eval,
    cmd_finetune,
    cmd_fit,
    cmd_halfmoons,
    cmd_pretrain,
    collect_dataset,
    load_dataset,
)
from deterra.selftest import (
    SelftestReport,
    SuiteResult,
    suite_chi2,
    suite_conservation,
    suite_fbl,
    suite_gae,
    suite_gradients,
    suite_schur,
)

EVAL_KEYS = {"ee_mean", "ee_std", "viol_mean", "viol_std"}


def read_rows(storage, key):
    with open(storage.get_path(key), newline="") as f:
        return list(csv.reader(f))


@pytest.fixture
def tiny_yaml(tmp_path, tiny_raw):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(tiny_raw))
    return str(path)


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for var in ("STORAGE_TYPE", "DETERRA_CONFIG", "DETERRA_DATA_DIR", "DETERRA_THREADS"):
        monkeypatch.delenv(var, raising=False)


def test_collect_is_deterministic_and_sized(tiny_cfg):
    a = collect_dataset(tiny_cfg, seed=3)
    b = collect_dataset(tiny_cfg, seed=3)
    assert len(a) == tiny_cfg.dataset_size
    np.testing.assert_array_equal(a.states, b.states)
    np.testing.assert_array_equal(a.rewards, b.rewards)
    assert not np.array_equal(a.actions, collect_dataset(tiny_cfg, seed=4).actions)


def test_collect_truncates_last_episode(tiny_cfg):
    cfg = dataclasses.replace(tiny_cfg, dataset_size=25)
    ds = collect_dataset(cfg, seed=3)
    assert len(ds) == 25
    assert ds.episode_length == cfg.env.horizon


def test_cmd_collect_writes_dataset_and_reports(tiny_cfg, storage):
    assert cmd_collect(tiny_cfg, storage, seed=3) == DATASET_KEY
    ds = load_dataset(tiny_cfg, storage)
    assert len(ds) == tiny_cfg.dataset_size
    coverage = read_rows(storage, "reports/coverage.csv")
    assert coverage[0] == ["dim", "min", "max"]
    assert len(coverage) == 1 + tiny_cfg.env.state_dim
    hist = read_rows(storage, "reports/reward_hist.csv")
    assert sum(int(r[2]) for r in hist[1:]) == len(ds)
    assert storage.exists("datasets/transitions.csv")


def test_load_dataset_rejects_other_env(tiny_cfg, storage):
    cmd_collect(tiny_cfg, storage, seed=3)
    other = dataclasses.replace(tiny_cfg, env=dataclasses.replace(tiny_cfg.env, arrival_rate=5.0))
    with pytest.raises(ArtifactError):
        load_dataset(other, storage)


def test_scratch_finetune_then_eval(tiny_cfg, storage):
    phase = cmd_finetune(tiny_cfg, storage)
    assert phase == "finetune_scratch"
    for seed in tiny_cfg.seeds:
        assert storage.exists(f"policies/finetune_scratch_seed{seed}.json")
    curve = read_rows(storage, "curves/finetune_scratch.csv")
    assert curve[0] == ["episode", "reward_mean", "cost_mean", "lambda", "seed"]
    assert len(curve) == 1 + tiny_cfg.finetune_episodes * len(tiny_cfg.seeds)
    meta = json.load(open(storage.get_path("curves/finetune_scratch.meta.json")))
    assert len(meta["env_hash"]) == 16

    res = cmd_eval(tiny_cfg, storage, "finetune_scratch_seed3", seed=1)
    assert set(res) == EVAL_KEYS
    stored = json.load(open(storage.get_path("reports/eval.json")))
    assert stored == pytest.approx(res)
    assert 0.0 <= res["viol_mean"] <= 1.0

    other = dataclasses.replace(tiny_cfg, env=dataclasses.replace(tiny_cfg.env, arrival_rate=5.0))
    with pytest.raises(ArtifactError):
        cmd_eval(other, storage, "finetune_scratch_seed3", seed=1)


def test_eval_missing_policy(tiny_cfg, storage):
    with pytest.raises(ArtifactError):
        cmd_eval(tiny_cfg, storage, "nope", seed=1)


@pytest.mark.slow
def test_full_pipeline(tiny_cfg, storage):
    cmd_collect(tiny_cfg, storage, seed=3)
    rows = cmd_fit(tiny_cfg, storage)
    assert all(np.isfinite(r[3]) and r[3] >= 0.0 for r in rows if r[1] in ("mae", "mae_raw"))
    report = read_rows(storage, "reports/fit_report.csv")
    assert report[0] == ["model", "metric", "train", "test"]

    key = cmd_pretrain(tiny_cfg, storage, seed=3)
    assert key == "policies/pretrained.json"
    for ep in range(tiny_cfg.checkpoint_every, tiny_cfg.pretrain_episodes + 1, tiny_cfg.checkpoint_every):
        assert storage.exists(f"policies/pretrain_ep{ep}.json")
    evolution = read_rows(storage, "curves/policy_evolution.csv")
    assert len(evolution) == 1 + tiny_cfg.pretrain_episodes // tiny_cfg.checkpoint_every

    assert cmd_finetune(tiny_cfg, storage, "pretrained") == "finetune_pretrained"
    summary = read_rows(storage, "curves/finetune_pretrained_summary.csv")
    assert len(summary) == 1 + tiny_cfg.finetune_episodes
    assert all(int(r[-1]) == len(tiny_cfg.seeds) for r in summary[1:])

    assert set(cmd_eval(tiny_cfg, storage, "pretrained", seed=1, deterministic=True)) == EVAL_KEYS
    lyap = cmd_eval(tiny_cfg, storage, "lyapunov", seed=1)
    assert set(lyap) == EVAL_KEYS


@pytest.mark.slow
def test_cmd_halfmoons(tiny_cfg, storage):
    metrics = cmd_halfmoons(tiny_cfg, storage, seed=3)
    assert set(metrics) == {"two_branch_coverage", "single_branch_hit_rate", "test_nll"}
    samples = read_rows(storage, "halfmoons/samples.csv")
    hm = tiny_cfg.halfmoons
    assert len(samples) == 1 + (hm.n_samples - hm.n_train) * hm.draws_per_condition


def test_bench_rows(tiny_cfg):
    rows = bench_rows(tiny_cfg)
    assert len(rows) == len(BENCH_SIZES) * 4
    by_module: dict[str, list[int]] = {}
    for b, u, k, m, module, ops in rows:
        assert b == u == k == m
        by_module.setdefault(module, []).append(ops)
    assert set(by_module) == {"policy", "kan_reward_cost", "vae_chmdn_generate", "ea_cgmm"}
    for counts in by_module.values():
        assert all(later > earlier > 0 for earlier, later in zip(counts, counts[1:]))


def test_operation_counters():
    assert mlp_ops(MlpSpec([3, 4, 2])) == 3 * 4 + 4 * 2
    # order 1, grid 2: basis 2*(2+2-1) = 6 per input, 2*1*(2+1+1) edge terms
    assert kan_ops(KanSpec([2, 1], grid_size=2, spline_order=1)) == 2 * 6 + 2 * 4
    assert ea_cgmm_ops(1, 1, 1) == 1 + 1 + 1 + 1


def test_main_exit_codes(tmp_path, tiny_yaml, tiny_cfg):
    out = str(tmp_path / "out")
    assert main(["bench", "--config", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG
    assert main(["eval", "--config", tiny_yaml, "--out", out]) == EXIT_CONFIG
    assert main(["eval", "--config", tiny_yaml, "--out", out, "--policy", "nope"]) == EXIT_ERROR
    assert main(["bench", "--config", tiny_yaml, "--out", out]) == EXIT_OK
    assert os.path.exists(os.path.join(out, "reports", "bench.csv"))
    stored = json.load(open(os.path.join(out, "config.json")))
    assert stored["env"]["U"] == tiny_cfg.env.U


def test_main_rejects_unknown_config_keys(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump({"env": {"bogus": 1}}))
    assert main(["bench", "--config", str(path), "--out", str(tmp_path / "out")]) == EXIT_CONFIG


def test_main_seed_flag_overrides_seeds(tmp_path, tiny_yaml):
    out = tmp_path / "out"
    assert main(["bench", "--config", tiny_yaml, "--out", str(out), "--seed", "17"]) == EXIT_OK
    stored = json.load(open(out / "config.json"))
    assert stored["seed"] == 17 and stored["seeds"] == [17]


def test_selftest_suites_pass_on_small_cases(tiny_cfg):
    for result in (
        suite_schur(1, cases=20),
        suite_chi2(1, max_dof=3),
        suite_fbl(1),
        suite_gae(1),
        suite_conservation(tiny_cfg, 1, episodes=3),
    ):
        assert result.passed, result.detail


@pytest.mark.slow
def test_selftest_gradients():
    assert suite_gradients(1).passed


def test_selftest_report_table():
    report = SelftestReport([SuiteResult("a", True, 0.0, "ok"), SuiteResult("b", False, 1.0, "bad")])
    assert not report.passed
    lines = report.table().splitlines()
    assert len(lines) == 3
    assert "PASS" in lines[1] and "FAIL" in lines[2]
