"""
The experiment phases: collect -> fit -> pretrain -> finetune -> eval, plus
the half-moons benchmark. Every phase reads and writes through a Storage.
"""

import numpy as np

from .config import ExperimentConfig, env_hash, to_dict
from .env.cmdp import CfMimoEnv
from .env.dataset import TransitionDataset, export_csv, read_dataset, write_dataset
from .errors import ArtifactError, DimensionError
from .genmodel.halfmoons import run_halfmoons
from .genmodel.virtual import fit_virtual_cmdp, load_virtual, save_virtual
from .logs import get_logger
from .mathcore import make_rng
from .metrics import EVOLUTION_HEADER, MetricsLog, MetricsRecord, store_curve, store_report, store_summary
from .rl.baselines import LyapunovScheduler, behavior_policy_uniform, evaluate_lyapunov
from .rl.contract import StateCmdp
from .rl.loop import evaluate_policy, train_loop
from .rl.policy import ActorCritic, build_actor_critic, load_policy, save_policy
from .rl.ppo import DualState, PpoLearner
from .storage import Storage, scratch_path
from .util import store_csv, store_json

logger = get_logger(__name__)

DATASET_KEY = "datasets/transitions.bin"
HIST_BINS = 20

# rng streams per phase, so phases never share random numbers
STREAM_COLLECT = 1
STREAM_PRETRAIN = 2
STREAM_FINETUNE = 3
STREAM_EVAL = 4
STREAM_SNAPSHOT = 5


def collect_dataset(cfg: ExperimentConfig, seed: int) -> TransitionDataset:
    """Roll the real env under the uniform behavior policy until dataset_size tuples exist."""
    env = CfMimoEnv(cfg.env)
    rng = make_rng(seed, STREAM_COLLECT)
    n = cfg.dataset_size
    S, A, U = cfg.env.state_dim, cfg.env.action_dim, cfg.env.U
    states, actions, next_states = np.zeros((n, S)), np.zeros((n, A)), np.zeros((n, S))
    rewards, costs, cost_per_user = np.zeros(n), np.zeros(n), np.zeros((n, U))
    i = 0
    while i < n:
        state = env.reset(rng)
        for _ in range(cfg.env.horizon):
            if i == n:
                break
            action = behavior_policy_uniform(A, rng)
            out = env.step(state, action, rng)
            states[i], actions[i], next_states[i] = state.vector(), action, out.next_state.vector()
            rewards[i], costs[i], cost_per_user[i] = out.reward, out.cost_agg, out.cost_per_user
            state = out.next_state
            i += 1
    return TransitionDataset(
        states=states,
        actions=actions,
        rewards=rewards,
        costs=costs,
        cost_per_user=cost_per_user,
        next_states=next_states,
        episode_length=cfg.env.horizon,
        env_hash=env_hash(cfg.env),
    )


def _histogram_rows(values: np.ndarray) -> list[tuple]:
    counts, edges = np.histogram(values, bins=HIST_BINS)
    return [(edges[i], edges[i + 1], int(counts[i])) for i in range(len(counts))]


def cmd_collect(cfg: ExperimentConfig, storage: Storage, seed: int) -> str:
    ds = collect_dataset(cfg, seed)
    tmp = scratch_path(DATASET_KEY)
    write_dataset(tmp, ds)
    storage.save(tmp, DATASET_KEY)
    tmp = scratch_path("transitions.csv")
    export_csv(tmp, ds)
    storage.save(tmp, "datasets/transitions.csv")

    both = np.vstack([ds.states, ds.next_states])
    store_csv(
        storage,
        "reports/coverage.csv",
        ["dim", "min", "max"],
        [(d, both[:, d].min(), both[:, d].max()) for d in range(ds.state_dim)],
    )
    store_csv(storage, "reports/reward_hist.csv", ["lo", "hi", "count"], _histogram_rows(ds.rewards))
    store_csv(storage, "reports/cost_hist.csv", ["lo", "hi", "count"], _histogram_rows(ds.costs))
    positive = ds.rewards[ds.rewards > 0]
    span = np.log10(positive.max() / positive.min()) if positive.size else 0.0
    logger.info(
        f"Collected {len(ds)} tuples ({int(np.ceil(len(ds) / ds.episode_length))} episodes): "
        f"reward in [{ds.rewards.min():.4g}, {ds.rewards.max():.4g}] ({span:.1f} decades), "
        f"mean cost {ds.costs.mean():.4f}"
    )
    return DATASET_KEY


def load_dataset(cfg: ExperimentConfig, storage: Storage) -> TransitionDataset:
    return read_dataset(storage.require(DATASET_KEY), env_hash(cfg.env))


def cmd_fit(cfg: ExperimentConfig, storage: Storage) -> list[tuple[str, str, float, float]]:
    ds = load_dataset(cfg, storage)
    v, report = fit_virtual_cmdp(ds, cfg.env, cfg.virtual, cost_threshold=cfg.ppo.cost_threshold)
    save_virtual(storage, v)
    store_report(storage, report.rows)
    return report.rows


def _store_policy(storage: Storage, tag: str, ac: ActorCritic, cfg: ExperimentConfig, **extra) -> str:
    key = f"policies/{tag}.json"
    tmp = scratch_path(key)
    save_policy(tmp, ac, cfg.ppo, extra={"env_hash": env_hash(cfg.env), **extra})
    storage.save(tmp, key)
    return key


def _load_policy(storage: Storage, tag: str, cfg: ExperimentConfig) -> ActorCritic:
    key = f"policies/{tag}.json"
    if not storage.exists(key):
        known = [k[len("policies/") : -len(".json")] for k in storage.list("policies/")]
        raise ArtifactError(f"no stored policy {tag}, available: {', '.join(known) or 'none'}")
    ac, _, data = load_policy(storage.get_path(key))
    if data.get("env_hash") != env_hash(cfg.env):
        raise ArtifactError(f"policy {tag} was trained for env hash {data.get('env_hash')}")
    if ac.obs_dim != cfg.env.state_dim or ac.action_dim != cfg.env.action_dim:
        raise DimensionError(
            f"policy {tag} has dims ({ac.obs_dim}, {ac.action_dim}), "
            f"env needs ({cfg.env.state_dim}, {cfg.env.action_dim})"
        )
    return ac


def _store_curves(storage: Storage, phase: str, log: MetricsLog, cfg: ExperimentConfig) -> None:
    store_curve(storage, phase, log)
    store_summary(storage, phase, log)
    store_json(storage, f"curves/{phase}.meta.json", {"env_hash": env_hash(cfg.env), "phase": phase})


def _record(log: MetricsLog, phase: str, points) -> None:
    for p in points:
        log.append(
            MetricsRecord(
                phase=phase,
                seed=p.seed,
                episode=p.episode,
                values={"reward_mean": p.reward_mean, "cost_mean": p.cost_mean, "lambda": p.lam},
            )
        )


def cmd_pretrain(cfg: ExperimentConfig, storage: Storage, seed: int) -> str:
    """
    PPO-Lagrangian in the virtual CMDP. Every checkpoint_every episodes the
    current policy is saved and scored in the real env; training carries on
    from that same policy.
    """
    virtual = load_virtual(storage, cfg.env)
    cmdp = StateCmdp(virtual, cfg.env)
    real = StateCmdp(CfMimoEnv(cfg.env), cfg.env)
    ac = build_actor_critic(cfg.env.state_dim, cfg.env.action_dim, cfg.ppo, seed)
    learner = PpoLearner(ac, cfg.ppo)
    evolution: list[tuple] = []

    def snapshot(episode: int, lr: PpoLearner, dual: DualState) -> None:
        if episode % cfg.checkpoint_every:
            return
        _store_policy(storage, f"pretrain_ep{episode}", lr.ac, cfg, episode=episode, lam=dual.lam)
        res = evaluate_policy(
            real,
            lr.ac,
            cfg.snapshot_eval_episodes,
            make_rng(cfg.snapshot_seed, STREAM_SNAPSHOT),
            deterministic=cfg.ppo.deterministic_eval,
        )
        evolution.append((episode, res["ee_mean"], res["ee_std"], res["viol_mean"], res["viol_std"]))
        logger.info(f"Snapshot at episode {episode}: real-env EE {res['ee_mean']:.4g}, violation {res['viol_mean']:.4f}")

    result = train_loop(
        cmdp, learner, cfg.pretrain_episodes, make_rng(seed, STREAM_PRETRAIN), seed=seed, callback=snapshot
    )
    log = MetricsLog()
    _record(log, "pretrain", result.curve)
    _store_curves(storage, "pretrain", log, cfg)
    store_csv(storage, "curves/policy_evolution.csv", EVOLUTION_HEADER, evolution)
    return _store_policy(storage, "pretrained", ac, cfg, lam=result.dual.lam)


def cmd_finetune(cfg: ExperimentConfig, storage: Storage, policy_tag: str | None = None) -> str:
    """
    PPO-Lagrangian in the real env for every configured seed, warm-started
    from policy_tag when given. Without a tag this is the non-pretrained
    baseline on the same code path. Seeds run one after another.
    """
    phase = f"finetune_{policy_tag}" if policy_tag else "finetune_scratch"
    log = MetricsLog()
    for seed in cfg.seeds:
        if policy_tag:
            ac = _load_policy(storage, policy_tag, cfg)
        else:
            ac = build_actor_critic(cfg.env.state_dim, cfg.env.action_dim, cfg.ppo, seed)
        cmdp = StateCmdp(CfMimoEnv(cfg.env), cfg.env)
        result = train_loop(
            cmdp, PpoLearner(ac, cfg.ppo), cfg.finetune_episodes, make_rng(seed, STREAM_FINETUNE), seed=seed
        )
        _record(log, phase, result.curve)
        _store_policy(storage, f"{phase}_seed{seed}", ac, cfg, lam=result.dual.lam)
    _store_curves(storage, phase, log, cfg)
    return phase


def cmd_eval(
    cfg: ExperimentConfig, storage: Storage, policy_tag: str, seed: int, deterministic: bool | None = None
) -> dict[str, float]:
    """
    Score a stored policy (or the drift-plus-penalty baseline, tag
    "lyapunov") over eval_episodes in the real env.
    """
    cmdp = StateCmdp(CfMimoEnv(cfg.env), cfg.env)
    rng = make_rng(seed, STREAM_EVAL)
    if policy_tag == "lyapunov":
        virtual = load_virtual(storage, cfg.env)
        sched = LyapunovScheduler(
            predict_reward=virtual.reward_model.predict,
            predict_cost=virtual.cost_model.predict,
            threshold=cfg.ppo.cost_threshold,
            weight=cfg.lyapunov_weight,
            candidates=cfg.lyapunov_candidates,
        )
        res = evaluate_lyapunov(cmdp, sched, cfg.eval_episodes, rng)
    else:
        ac = _load_policy(storage, policy_tag, cfg)
        mode = cfg.ppo.deterministic_eval if deterministic is None else deterministic
        res = evaluate_policy(cmdp, ac, cfg.eval_episodes, rng, deterministic=mode)
    logger.info(f"Eval {policy_tag}: EE {res['ee_mean']:.4g} bits/J, violation rate {res['viol_mean']:.4f}")
    store_json(storage, "reports/eval.json", res)
    return res


def cmd_halfmoons(cfg: ExperimentConfig, storage: Storage, seed: int) -> dict[str, float]:
    result = run_halfmoons(cfg.halfmoons, seed)
    store_csv(storage, "halfmoons/samples.csv", ["condition", "sample"], result.rows)
    metrics = {
        "two_branch_coverage": result.two_branch_coverage,
        "single_branch_hit_rate": result.single_branch_hit_rate,
        "test_nll": result.test_nll,
    }
    store_json(storage, "halfmoons/metrics.json", metrics)
    return metrics


def store_config(cfg: ExperimentConfig, storage: Storage) -> None:
    store_json(storage, "config.json", {**to_dict(cfg), "env_hash": env_hash(cfg.env)})
