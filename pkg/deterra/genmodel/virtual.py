"""
The learned (virtual) CMDP: generative initial-state and transition models
plus reward/cost regressors, behind the same reset/step contract as the
real environment.
"""

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from ..config import EnvConfig, TrainConfig, VirtualConfig, env_hash
from ..errors import ArtifactError, DimensionError, InsufficientDataError
from ..logs import get_logger
from ..mathcore import BlockSplit, make_rng, mmd_sq
from ..nn.kan import Kan, KanSpec
from ..nn.mlp import Mlp, MlpSpec, width_for_parity
from ..nn.params import model_from_dict, model_to_dict
from ..nn.scaler import Scaler, Standardizer, fit_scaler
from ..nn.train import RegressorFit, seeded_init, train_regressor
from ..env.cmdp import CmdpState, StepOutcome
from ..env.dataset import TransitionDataset
from ..env.phy import RawAction
from ..storage import Storage
from ..util import load_json, store_json
from .ea_cgmm import EaCgmm
from .gmm import Gmm, gmm_sample, gmm_sample_n
from .vae_chmdn import VaeChmdn, VaeChmdnSpec, generate_gmm, vae_chmdn_from_dict, vae_chmdn_to_dict, vae_chmdn_train

logger = get_logger(__name__)

MANIFEST_VERSION = 1
MANIFEST_KEY = "models/virtual/manifest.json"
MAE_MAX_TUPLES = 500
MMD_MAX_SAMPLES = 2000


@dataclass
class TransitionModelBundle:
    """
    channel_joint is over (r_{t+1}, r_t); queue_joint over (q_{t+1}, a_t, s_t).
    The leading block of each split is the "next" part.
    """

    channel_joint: Gmm
    queue_joint: Gmm
    channel_split: BlockSplit
    queue_split: BlockSplit

    def check(self, cfg: EnvConfig) -> None:
        expected = {
            "channel_joint": (self.channel_joint.dim, 2 * cfg.pbm_dim),
            "queue_joint": (self.queue_joint.dim, 2 * cfg.U + cfg.action_dim + cfg.state_dim),
            "channel_split": (self.channel_split.m, cfg.pbm_dim),
            "queue_split": (self.queue_split.m, 2 * cfg.U),
        }
        for name, (got, want) in expected.items():
            if got != want:
                raise DimensionError(f"{name} has size {got}, env config needs {want}")


def round_queues(q: np.ndarray, users: int) -> tuple[np.ndarray, np.ndarray]:
    """Round sampled queue counts to non-negative integers with q_urg <= q_buf."""
    q = np.maximum(np.rint(q), 0.0).astype(np.int64)
    q_buf = q[:users]
    q_urg = np.minimum(q[users:], q_buf)
    return q_buf, q_urg


@dataclass
class VirtualCmdp:
    cfg: EnvConfig
    init_r: Gmm
    init_q: Gmm
    transitions: TransitionModelBundle
    reward_model: RegressorFit
    cost_model: RegressorFit
    r_scaler: Scaler
    q_scaler: Scaler
    alpha_channel: float = 0.03
    alpha_queue: float = 0.03
    cost_threshold: float = 0.005
    env_hash: str = ""
    # kept only when mixtures are re-decoded per episode
    generators: dict[str, VaeChmdn] = field(default_factory=dict)
    _channel: EaCgmm = field(init=False, repr=False)
    _queue: EaCgmm = field(init=False, repr=False)

    def __post_init__(self):
        for name in ("alpha_channel", "alpha_queue"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        self.transitions.check(self.cfg)
        if self.init_r.dim != self.cfg.pbm_dim or self.init_q.dim != 2 * self.cfg.U:
            raise DimensionError("initial-state models do not match the env config")
        self._rebuild()

    def _rebuild(self) -> None:
        t = self.transitions
        self._channel = EaCgmm(t.channel_joint, t.channel_split, self.alpha_channel)
        self._queue = EaCgmm(t.queue_joint, t.queue_split, self.alpha_queue)

    @property
    def state_dim(self) -> int:
        return self.cfg.state_dim

    @property
    def action_dim(self) -> int:
        return self.cfg.action_dim

    @property
    def horizon(self) -> int:
        return self.cfg.horizon

    def redecode(self, rng: np.random.Generator) -> None:
        """Draw fresh mixtures from the stored generators (per-episode mode only)."""
        if not self.generators:
            return
        self.init_r = generate_gmm(self.generators["init_r"], rng)
        self.init_q = generate_gmm(self.generators["init_q"], rng)
        self.transitions = dataclasses.replace(
            self.transitions,
            channel_joint=generate_gmm(self.generators["channel"], rng),
            queue_joint=generate_gmm(self.generators["queue"], rng),
        )
        self._rebuild()

    def _assemble(self, r_scaled: np.ndarray, q_scaled: np.ndarray) -> CmdpState:
        r = np.maximum(self.r_scaler.invert(r_scaled), 0.0)
        q_buf, q_urg = round_queues(self.q_scaler.invert(q_scaled), self.cfg.U)
        return CmdpState(r=r, q_buf=q_buf, q_urg=q_urg)

    def scaled_state(self, state: CmdpState) -> np.ndarray:
        q = np.concatenate([state.q_buf, state.q_urg]).astype(np.float64)
        return np.concatenate([self.r_scaler.apply(state.r), self.q_scaler.apply(q)])

    def reset(self, rng: np.random.Generator) -> CmdpState:
        self.redecode(rng)
        return self._assemble(gmm_sample(self.init_r, rng), gmm_sample(self.init_q, rng))

    def next_scaled(
        self, state: CmdpState, action: np.ndarray, rng: np.random.Generator
    ) -> tuple[np.ndarray, np.ndarray]:
        """One draw of the scaled (r_{t+1}, q_{t+1}) given (s_t, a_t)."""
        s_scaled = self.scaled_state(state)
        r_next = gmm_sample(self._channel.infer(s_scaled[: self.cfg.pbm_dim]), rng)
        q_next = gmm_sample(self._queue.infer(np.concatenate([action, s_scaled])), rng)
        return r_next, q_next

    def predict_reward_cost(self, state: CmdpState, action: np.ndarray) -> tuple[float, float]:
        x = np.concatenate([state.vector(), action])[None, :]
        reward = float(self.reward_model.predict(x)[0])
        cost = float(np.clip(self.cost_model.predict(x)[0], 0.0, 1.0))
        return reward, cost

    def step(self, state: CmdpState, raw: RawAction | np.ndarray, rng: np.random.Generator) -> StepOutcome:
        action = raw.vector() if isinstance(raw, RawAction) else np.asarray(raw, dtype=np.float64)
        if action.shape != (self.cfg.action_dim,):
            raise DimensionError(f"action has shape {action.shape}, expected ({self.cfg.action_dim},)")
        reward, cost = self.predict_reward_cost(state, action)
        r_next, q_next = self.next_scaled(state, action, rng)
        U = self.cfg.U
        zeros = np.zeros(U, dtype=np.int64)
        return StepOutcome(
            next_state=self._assemble(r_next, q_next),
            reward=reward,
            cost_per_user=np.full(U, cost),
            cost_agg=cost,
            vio=zeros,
            drop=zeros.copy(),
            tx=zeros.copy(),
            bits_served=np.zeros(U),
        )


# ---------------------------------------------------------------- fitting


@dataclass
class FidelityReport:
    """Rows of (model, metric, train, test); test may be nan where only one value exists."""

    rows: list[tuple[str, str, float, float]] = field(default_factory=list)

    def add(self, model: str, metric: str, train: float, test: float = float("nan")) -> None:
        self.rows.append((model, metric, float(train), float(test)))

    def get(self, model: str, metric: str) -> tuple[float, float]:
        for m, k, tr, te in self.rows:
            if m == model and k == metric:
                return tr, te
        raise KeyError(f"{model}/{metric}")


def split_episodes(ds: TransitionDataset, test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Tuple indices of train and held-out episodes."""
    episode = np.arange(len(ds)) // ds.episode_length
    n_ep = int(episode[-1]) + 1
    if n_ep < 2:
        raise InsufficientDataError("at least two episodes are needed to hold one out")
    rng = make_rng(seed, stream=31)
    n_test = min(max(1, int(round(n_ep * test_fraction))), n_ep - 1)
    test_eps = rng.choice(n_ep, size=n_test, replace=False)
    is_test = np.isin(episode, test_eps)
    return np.flatnonzero(~is_test), np.flatnonzero(is_test)


def dequantize(q: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Uniform jitter in [-0.5, 0.5) on integer counts."""
    return q + rng.uniform(-0.5, 0.5, size=q.shape)


class _Features:
    """Scaled feature blocks of a dataset, shared by every model fit."""

    def __init__(self, cfg: EnvConfig, ds: TransitionDataset, vcfg: VirtualConfig, rng: np.random.Generator):
        p, U = cfg.pbm_dim, cfg.U
        self.r = ds.states[:, :p]
        self.r_next = ds.next_states[:, :p]
        q = ds.states[:, p:]
        q_next = ds.next_states[:, p:]
        if vcfg.dequantize:
            q, q_next = dequantize(q, rng), dequantize(q_next, rng)
        elif np.any(np.ptp(np.vstack([q, q_next]), axis=0) == 0.0):
            logger.warning("constant queue dimension without dequantization, mixture fits may degenerate")
        self.r_scaler = fit_scaler(np.vstack([self.r, self.r_next]))
        self.q_scaler = fit_scaler(np.vstack([q, q_next]))
        self.rs = self.r_scaler.apply(self.r)
        self.rs_next = self.r_scaler.apply(self.r_next)
        self.qs = self.q_scaler.apply(q)
        self.qs_next = self.q_scaler.apply(q_next)
        self.actions = ds.actions
        self.U = U

    def state(self, idx: np.ndarray) -> np.ndarray:
        return np.hstack([self.rs[idx], self.qs[idx]])

    def channel_rows(self, idx: np.ndarray) -> np.ndarray:
        return np.hstack([self.rs_next[idx], self.rs[idx]])

    def queue_rows(self, idx: np.ndarray) -> np.ndarray:
        return np.hstack([self.qs_next[idx], self.actions[idx], self.state(idx)])


def _vae(
    name: str, data: np.ndarray, components: int, vcfg: VirtualConfig, seed_offset: int
) -> tuple[VaeChmdn, Gmm, float]:
    spec = VaeChmdnSpec(dim=data.shape[1], latent_dim=vcfg.latent_dim, components=components, hidden=list(vcfg.vae_hidden))
    train_cfg = dataclasses.replace(vcfg.vae_train, seed=vcfg.vae_train.seed + seed_offset)
    logger.info(f"Fitting {name} mixture generator on {data.shape[0]} samples of dim {data.shape[1]}")
    fit = vae_chmdn_train(spec, data, train_cfg)
    gmm = generate_gmm(fit.model, make_rng(vcfg.decode_seed, stream=seed_offset))
    return fit.model, gmm, fit.test_nll


def kan_regressor(in_dim: int, vcfg: VirtualConfig, seed: int) -> Kan:
    spec = KanSpec(
        widths=[in_dim, *vcfg.kan_hidden, 1],
        grid_size=vcfg.grid_size,
        spline_order=vcfg.spline_order,
        grid_eps=vcfg.grid_eps,
    )
    with seeded_init(seed):
        return Kan(spec)


def parity_mlp(in_dim: int, target_params: int, seed: int) -> Mlp:
    width = width_for_parity(in_dim, 1, target_params)
    with seeded_init(seed):
        return Mlp(MlpSpec([in_dim, width, width, 1], activation="silu"))


def _regressors(
    name: str, x: np.ndarray, y: np.ndarray, vcfg: VirtualConfig, report: FidelityReport, compare_mlp: bool
) -> RegressorFit:
    tcfg: TrainConfig = vcfg.regressor_train
    kan = kan_regressor(x.shape[1], vcfg, tcfg.seed)
    fit = train_regressor(kan, x, y, tcfg)
    report.add(f"{name}_kan", "mae", fit.train_mae, fit.test_mae)
    report.add(f"{name}_kan", "bias", fit.train_bias, fit.test_bias)
    if compare_mlp:
        mlp = parity_mlp(x.shape[1], kan.spec.param_count(), tcfg.seed)
        mfit = train_regressor(mlp, x, y, tcfg)
        report.add(f"{name}_mlp", "mae", mfit.train_mae, mfit.test_mae)
        report.add(f"{name}_mlp", "bias", mfit.train_bias, mfit.test_bias)
        report.add(f"{name}_mlp", "params", float(sum(p.numel() for p in mlp.parameters())))
        report.add(f"{name}_kan", "params", float(kan.spec.param_count()))
    return fit


def next_state_mae(
    v: VirtualCmdp, ds: TransitionDataset, idx: np.ndarray, draws: int, rng: np.random.Generator
) -> dict[str, float]:
    """
    MAE between generated and true next states in scaled units, for the r and
    q blocks, from one draw and from the mean of `draws` draws per tuple.
    """
    p = v.cfg.pbm_dim
    single = {"r": [], "q": []}
    averaged = {"r": [], "q": []}
    for i in idx:
        state = CmdpState.from_vector(v.cfg, ds.states[i])
        truth = v.scaled_state(CmdpState.from_vector(v.cfg, ds.next_states[i]))
        samples = []
        for _ in range(draws):
            r_next, q_next = v.next_scaled(state, ds.actions[i], rng)
            # compare in the same rounded units as the truth
            samples.append(v.scaled_state(v._assemble(r_next, q_next)))
        samples = np.stack(samples)
        for block, sl in (("r", slice(0, p)), ("q", slice(p, None))):
            single[block].append(np.mean(np.abs(samples[0, sl] - truth[sl])))
            averaged[block].append(np.mean(np.abs(samples[:, sl].mean(axis=0) - truth[sl])))
    return {
        "r_single": float(np.mean(single["r"])),
        "r_averaged": float(np.mean(averaged["r"])),
        "q_single": float(np.mean(single["q"])),
        "q_averaged": float(np.mean(averaged["q"])),
    }


def fit_virtual_cmdp(
    ds: TransitionDataset,
    cfg: EnvConfig,
    vcfg: VirtualConfig,
    cost_threshold: float = 0.005,
    compare_mlp: bool = True,
) -> tuple[VirtualCmdp, FidelityReport]:
    """
    Fit every component of the virtual CMDP on the training episodes of ds
    and score it on the held-out episodes.
    """
    expected_hash = env_hash(cfg)
    if ds.env_hash != expected_hash:
        raise ArtifactError(f"dataset was collected for env hash {ds.env_hash}, config hash is {expected_hash}")
    if ds.state_dim != cfg.state_dim or ds.action_dim != cfg.action_dim:
        raise DimensionError("dataset dimensions do not match the env config")
    joint_dims = (2 * cfg.pbm_dim, 2 * cfg.U + cfg.action_dim + cfg.state_dim)
    if len(ds) < 10 * max(joint_dims):
        raise InsufficientDataError(f"{len(ds)} tuples, at least {10 * max(joint_dims)} are needed")

    rng = make_rng(vcfg.regressor_train.seed, stream=41)
    train_idx, test_idx = split_episodes(ds, vcfg.regressor_train.test_fraction, vcfg.regressor_train.seed)
    feats = _Features(cfg, ds, vcfg, rng)
    report = FidelityReport()
    L = ds.episode_length
    init_train = train_idx[train_idx % L == 0]
    init_test = test_idx[test_idx % L == 0]
    logger.info(
        f"Fitting virtual CMDP on {len(train_idx)} tuples ({len(init_train)} episodes), "
        f"{len(test_idx)} held out"
    )

    init_r_gen, init_r, nll = _vae("init_r", feats.rs[init_train], vcfg.init_components, vcfg, 1)
    report.add("init_r", "nll", nll)
    init_q_gen, init_q, nll = _vae("init_q", feats.qs[init_train], vcfg.init_components, vcfg, 2)
    report.add("init_q", "nll", nll)
    ch_gen, ch_joint, nll = _vae("channel", feats.channel_rows(train_idx), vcfg.transition_components, vcfg, 3)
    report.add("channel_joint", "nll", nll)
    q_gen, q_joint, nll = _vae("queue", feats.queue_rows(train_idx), vcfg.transition_components, vcfg, 4)
    report.add("queue_joint", "nll", nll)

    x = np.hstack([ds.states, ds.actions])
    reward_fit = _regressors("reward", x[train_idx], ds.rewards[train_idx], vcfg, report, compare_mlp)
    cost_fit = _regressors("cost", x[train_idx], ds.costs[train_idx], vcfg, report, compare_mlp)

    v = VirtualCmdp(
        cfg=cfg,
        init_r=init_r,
        init_q=init_q,
        transitions=TransitionModelBundle(
            channel_joint=ch_joint,
            queue_joint=q_joint,
            channel_split=BlockSplit(cfg.pbm_dim),
            queue_split=BlockSplit(2 * cfg.U),
        ),
        reward_model=reward_fit,
        cost_model=cost_fit,
        r_scaler=feats.r_scaler,
        q_scaler=feats.q_scaler,
        alpha_channel=vcfg.alpha_channel,
        alpha_queue=vcfg.alpha_queue,
        cost_threshold=cost_threshold,
        env_hash=expected_hash,
        generators=(
            {"init_r": init_r_gen, "init_q": init_q_gen, "channel": ch_gen, "queue": q_gen}
            if vcfg.redecode_per_episode
            else {}
        ),
    )
    _score(v, ds, feats, train_idx, test_idx, init_train, init_test, vcfg, report, rng)
    return v, report


def _score(
    v: VirtualCmdp,
    ds: TransitionDataset,
    feats: _Features,
    train_idx: np.ndarray,
    test_idx: np.ndarray,
    init_train: np.ndarray,
    init_test: np.ndarray,
    vcfg: VirtualConfig,
    report: FidelityReport,
    rng: np.random.Generator,
) -> None:
    x = np.hstack([ds.states, ds.actions])
    for name, model, y in (("reward", v.reward_model, ds.rewards), ("cost", v.cost_model, ds.costs)):
        tr = np.abs(model.predict(x[train_idx]) - y[train_idx]).mean()
        te = np.abs(model.predict(x[test_idx]) - y[test_idx]).mean()
        report.add(f"{name}_kan", "mae_raw", tr, te)

    picks = test_idx
    if len(picks) > MAE_MAX_TUPLES:
        picks = np.sort(rng.choice(picks, size=MAE_MAX_TUPLES, replace=False))
    mae = next_state_mae(v, ds, picks, vcfg.mae_draws, rng)
    for block in ("r", "q"):
        report.add("next_state", f"{block}_mae_single", float("nan"), mae[f"{block}_single"])
        report.add("next_state", f"{block}_mae_averaged", float("nan"), mae[f"{block}_averaged"])

    real_train = feats.state(init_train)
    real_test = feats.state(init_test)
    n_gen = min(MMD_MAX_SAMPLES, max(len(init_test), 200))
    generated = np.hstack([gmm_sample_n(v.init_r, rng, n_gen), gmm_sample_n(v.init_q, rng, n_gen)])
    report.add("init", "mmd_generated", float("nan"), mmd_sq(generated, real_test))
    report.add("init", "mmd_real_vs_real", float("nan"), mmd_sq(real_train, real_test))
    logger.info(
        f"Virtual CMDP fidelity: next-state MAE r {mae['r_averaged']:.4f}, q {mae['q_averaged']:.4f}; "
        f"reward MAE {report.get('reward_kan', 'mae')[1]:.4f} (scaled)"
    )


# ---------------------------------------------------------------- bundle files


def _regressor_dict(fit: RegressorFit) -> dict:
    return model_to_dict(
        fit.model,
        extra={
            "x_scaler": fit.x_scaler.to_dict(),
            "y_std": fit.y_std.to_dict(),
            "errors": {
                "train_mae": fit.train_mae,
                "test_mae": fit.test_mae,
                "train_bias": fit.train_bias,
                "test_bias": fit.test_bias,
            },
        },
    )


def _regressor_from_dict(data: dict) -> RegressorFit:
    err = data["errors"]
    return RegressorFit(
        model=model_from_dict(data),
        x_scaler=Scaler.from_dict(data["x_scaler"]),
        y_std=Standardizer.from_dict(data["y_std"]),
        train_mae=err["train_mae"],
        test_mae=err["test_mae"],
        train_bias=err["train_bias"],
        test_bias=err["test_bias"],
    )


def save_virtual(storage: Storage, v: VirtualCmdp) -> None:
    """Manifest plus one JSON file per regressor (and per generator in re-decode mode)."""
    files = {"reward": "models/virtual/reward.json", "cost": "models/virtual/cost.json"}
    store_json(storage, files["reward"], _regressor_dict(v.reward_model))
    store_json(storage, files["cost"], _regressor_dict(v.cost_model))
    generators = {}
    for name, gen in v.generators.items():
        key = f"models/virtual/generator_{name}.json"
        store_json(storage, key, vae_chmdn_to_dict(gen))
        generators[name] = key
    t = v.transitions
    manifest = {
        "version": MANIFEST_VERSION,
        "env_hash": v.env_hash,
        "alpha_channel": v.alpha_channel,
        "alpha_queue": v.alpha_queue,
        "cost_threshold": v.cost_threshold,
        "init_r": v.init_r.to_dict(),
        "init_q": v.init_q.to_dict(),
        "channel_joint": t.channel_joint.to_dict(),
        "queue_joint": t.queue_joint.to_dict(),
        "channel_split": t.channel_split.m,
        "queue_split": t.queue_split.m,
        "r_scaler": v.r_scaler.to_dict(),
        "q_scaler": v.q_scaler.to_dict(),
        "regressors": files,
        "generators": generators,
    }
    store_json(storage, MANIFEST_KEY, manifest)
    logger.info(f"Saved virtual CMDP bundle under {MANIFEST_KEY}")


def load_virtual(storage: Storage, cfg: EnvConfig) -> VirtualCmdp:
    manifest = load_json(storage.require(MANIFEST_KEY))
    if manifest.get("version") != MANIFEST_VERSION:
        raise ArtifactError(f"unsupported virtual bundle version {manifest.get('version')}")
    expected = env_hash(cfg)
    if manifest["env_hash"] != expected:
        raise ArtifactError(f"virtual bundle was fitted for env hash {manifest['env_hash']}, config hash is {expected}")
    regs = {k: _regressor_from_dict(load_json(storage.require(key))) for k, key in manifest["regressors"].items()}
    generators = {k: vae_chmdn_from_dict(load_json(storage.require(key))) for k, key in manifest["generators"].items()}
    return VirtualCmdp(
        cfg=cfg,
        init_r=Gmm.from_dict(manifest["init_r"]),
        init_q=Gmm.from_dict(manifest["init_q"]),
        transitions=TransitionModelBundle(
            channel_joint=Gmm.from_dict(manifest["channel_joint"]),
            queue_joint=Gmm.from_dict(manifest["queue_joint"]),
            channel_split=BlockSplit(int(manifest["channel_split"])),
            queue_split=BlockSplit(int(manifest["queue_split"])),
        ),
        reward_model=regs["reward"],
        cost_model=regs["cost"],
        r_scaler=Scaler.from_dict(manifest["r_scaler"]),
        q_scaler=Scaler.from_dict(manifest["q_scaler"]),
        alpha_channel=float(manifest["alpha_channel"]),
        alpha_queue=float(manifest["alpha_queue"]),
        cost_threshold=float(manifest["cost_threshold"]),
        env_hash=manifest["env_hash"],
        generators=generators,
    )
