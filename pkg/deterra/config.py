import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict

import yaml
from dotenv import load_dotenv

from .errors import ConfigError
from .logs import get_logger

logger = get_logger(__name__)

SCHEMA_VERSION = 1


@dataclass
class ChannelConfig:
    paths: int = 6
    angle_spread_deg: float = 120.0
    # exponential power profile, path l gets weight exp(-l / path_decay)
    path_decay: float = 2.0
    correlation: float = 0.95
    delay_spread_s: float = 1e-6
    path_gain_db_min: float = -135.0
    path_gain_db_max: float = -115.0

    def validate(self) -> None:
        if self.paths < 1:
            raise ConfigError("channel.paths must be >= 1")
        if not 0.0 <= self.correlation < 1.0:
            raise ConfigError("channel.correlation must lie in [0, 1)")
        if self.path_decay <= 0:
            raise ConfigError("channel.path_decay must be > 0")
        if self.path_gain_db_min > self.path_gain_db_max:
            raise ConfigError("channel.path_gain_db_min exceeds path_gain_db_max")


@dataclass
class EnvConfig:
    B: int = 2
    U: int = 2
    K: int = 2
    M: int = 2
    C: int = 20
    N: int = 75
    p_max_dbm: float = 20.0
    noise_psd_dbm_hz: float = -174.0
    subcarrier_spacing_hz: float = 15e3
    eps: float = 1e-6
    arrival_rate: float = 30.0
    packet_bits_min: int = 50
    packet_bits_max: int = 200
    deadline_slots: int = 2
    buffer_bits: int = 30_000
    horizon: int = 100
    slot_seconds: float = 5e-3
    channel: ChannelConfig = field(default_factory=ChannelConfig)

    @property
    def p_max(self) -> float:
        """Per-AP power budget in watts."""
        return 10.0 ** ((self.p_max_dbm - 30.0) / 10.0)

    @property
    def subband_bandwidth_hz(self) -> float:
        return self.C * self.subcarrier_spacing_hz

    @property
    def noise_power(self) -> float:
        """Noise power over one subband in watts."""
        psd_w = 10.0 ** ((self.noise_psd_dbm_hz - 30.0) / 10.0)
        return psd_w * self.subband_bandwidth_hz

    @property
    def links(self) -> int:
        return self.B * self.U * self.K

    @property
    def pbm_dim(self) -> int:
        return self.links * self.M

    @property
    def state_dim(self) -> int:
        return self.pbm_dim + 2 * self.U

    @property
    def action_dim(self) -> int:
        return 3 * self.links

    def validate(self) -> None:
        for name in ("B", "U", "K", "M", "C", "N", "horizon", "deadline_slots"):
            if getattr(self, name) < 1:
                raise ConfigError(f"env.{name} must be >= 1")
        if self.packet_bits_min < 1 or self.packet_bits_min > self.packet_bits_max:
            raise ConfigError("env.packet_bits_min/max must satisfy 1 <= min <= max")
        if not 0.0 < self.eps < 1.0:
            raise ConfigError("env.eps must lie in (0, 1)")
        if self.arrival_rate < 0:
            raise ConfigError("env.arrival_rate must be >= 0")
        # N symbols of length 1/scs fill one slot
        bandwidth = self.K * self.C * self.subcarrier_spacing_hz
        if not math.isclose(
            self.N * self.K * self.C / bandwidth, self.slot_seconds, rel_tol=1e-9
        ):
            raise ConfigError(
                f"env.N / subcarrier_spacing ({self.N / self.subcarrier_spacing_hz}) "
                f"does not match slot_seconds ({self.slot_seconds})"
            )
        self.channel.validate()


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 256
    epochs: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 32
    loss: str = "mse"
    grad_clip: float = 10.0
    test_fraction: float = 0.2

    def validate(self) -> None:
        if self.lr <= 0:
            raise ConfigError("train.lr must be > 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("train.batch_size and train.epochs must be >= 1")
        if self.loss not in ("mse", "nll"):
            raise ConfigError(f"train.loss must be mse or nll, got {self.loss}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("train.test_fraction must lie in (0, 1)")


@dataclass
class PpoConfig:
    gamma: float = 0.9
    gae_lambda: float = 0.95
    clip_ratio: float = 0.2
    update_epochs: int = 10
    minibatch_size: int = 256
    episodes_per_update: int = 1
    policy_lr: float = 3e-4
    value_lr: float = 1e-3
    dual_lr: float = 0.1
    lambda_init: float = 30.0
    cost_threshold: float = 0.005
    hidden: list[int] = field(default_factory=lambda: [64, 64])
    activation: str = "tanh"
    log_std_init: float = -0.5
    reward_scale: float = 1e-6
    max_grad_norm: float = 0.5
    deterministic_eval: bool = False

    def validate(self) -> None:
        if not 0.0 <= self.gamma <= 1.0 or not 0.0 <= self.gae_lambda <= 1.0:
            raise ConfigError("ppo.gamma and ppo.gae_lambda must lie in [0, 1]")
        if self.clip_ratio <= 0:
            raise ConfigError("ppo.clip_ratio must be > 0")
        if self.lambda_init < 0:
            raise ConfigError("ppo.lambda_init must be >= 0")
        if self.policy_lr <= 0 or self.value_lr <= 0 or self.dual_lr < 0:
            raise ConfigError("ppo learning rates must be positive")


@dataclass
class VirtualConfig:
    init_components: int = 8
    transition_components: int = 8
    alpha_channel: float = 0.03
    alpha_queue: float = 0.03
    latent_dim: int = 4
    vae_hidden: list[int] = field(default_factory=lambda: [128, 128])
    kan_hidden: list[int] = field(default_factory=lambda: [8])
    grid_size: int = 10
    spline_order: int = 3
    grid_eps: float = 0.1
    regressor_train: TrainConfig = field(
        default_factory=lambda: TrainConfig(lr=1e-3, epochs=60)
    )
    vae_train: TrainConfig = field(
        default_factory=lambda: TrainConfig(lr=1e-3, epochs=80, loss="nll")
    )
    decode_seed: int = 0
    redecode_per_episode: bool = False
    mae_draws: int = 8
    dequantize: bool = True

    def validate(self) -> None:
        for name in ("alpha_channel", "alpha_queue"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ConfigError(f"virtual.{name} must lie in (0, 1)")
        if self.init_components < 1 or self.transition_components < 1:
            raise ConfigError("virtual component counts must be >= 1")
        if self.grid_size < 1 or self.spline_order < 1:
            raise ConfigError("virtual.grid_size and virtual.spline_order must be >= 1")
        self.regressor_train.validate()
        self.vae_train.validate()


@dataclass
class HalfMoonsConfig:
    n_samples: int = 400
    n_train: int = 200
    noise: float = 0.05
    components: int = 8
    alpha: float = 0.03
    draws_per_condition: int = 200
    train: TrainConfig = field(
        default_factory=lambda: TrainConfig(lr=3e-3, epochs=400, batch_size=64, loss="nll")
    )


@dataclass
class ExperimentConfig:
    version: int = SCHEMA_VERSION
    profile: str = "desk"
    env: EnvConfig = field(default_factory=EnvConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    virtual: VirtualConfig = field(default_factory=VirtualConfig)
    halfmoons: HalfMoonsConfig = field(default_factory=HalfMoonsConfig)
    dataset_size: int = 8000
    seeds: list[int] = field(default_factory=lambda: [7, 8, 9, 10, 11])
    seed: int = 32
    pretrain_episodes: int = 300
    finetune_episodes: int = 400
    eval_episodes: int = 100
    checkpoint_every: int = 150
    snapshot_eval_episodes: int = 10
    snapshot_seed: int = 31
    lyapunov_weight: float = 10.0
    lyapunov_candidates: int = 200
    output_dir: str = "./runs"
    storage: Dict[str, Any] = field(default_factory=lambda: {"type": "fs"})

    def validate(self) -> None:
        if self.version != SCHEMA_VERSION:
            raise ConfigError(
                f"Unsupported config version {self.version} (expected {SCHEMA_VERSION})"
            )
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        if self.dataset_size < 1:
            raise ConfigError("dataset_size must be >= 1")
        self.env.validate()
        self.ppo.validate()
        self.virtual.validate()


PROFILES: dict[str, dict[str, Any]] = {
    "desk": {},
    "full": {
        "env": {"B": 3, "U": 3, "K": 4, "M": 4, "horizon": 200},
        "dataset_size": 30_000,
        "pretrain_episodes": 1500,
        "finetune_episodes": 1500,
        "seeds": [7, 8, 9, 10, 11, 12, 13, 14],
    },
    "large": {
        "env": {"B": 4, "U": 6, "K": 6, "M": 6, "p_max_dbm": 30.0, "horizon": 200},
        "ppo": {"cost_threshold": 0.02},
    },
}


def load_config(config_path: str | None = None) -> Dict[str, Any]:
    """
    Load the experiment configuration from YAML (JSON is accepted as well).
    Priority:
    1. explicit config_path (must exist).
    2. DETERRA_CONFIG env variable.
    3. 'deterra.yaml' in the current working directory.
    4. empty dict, i.e. the built-in desk profile.
    Supports ${VAR} placeholders via os.path.expandvars.
    Loads .env file if present.
    """
    load_dotenv()

    if config_path is not None and not os.path.exists(config_path):
        raise ConfigError(f"Config file not found: {config_path}")

    source = config_path or os.getenv("DETERRA_CONFIG")
    if source and not os.path.exists(source):
        raise ConfigError(f"DETERRA_CONFIG points to a missing file: {source}")
    if not source:
        local_path = os.path.join(os.getcwd(), "deterra.yaml")
        source = local_path if os.path.exists(local_path) else None

    if source is None:
        logger.info("No config file found, using built-in desk profile")
        return {}

    with open(source, "r") as f:
        raw = f.read()

    expanded = os.path.expandvars(raw)

    try:
        res = yaml.safe_load(expanded)
    except yaml.YAMLError as e:
        raise ConfigError(f"Cannot parse {source}: {e}") from e
    if res is None:
        return {}
    if not isinstance(res, dict):
        raise ConfigError(f"{source} must contain a mapping at top level")
    logger.info(f"Loaded config from {source}")
    return res


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _build(default: Any, data: Any, path: str):
    """Overlay a raw mapping onto a dataclass instance, recursing into nested configs."""
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be a mapping")
    names = {f.name for f in dataclasses.fields(default)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"Unknown keys in {path or 'config'}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        current = getattr(default, name)
        if dataclasses.is_dataclass(current):
            kwargs[name] = _build(current, value, f"{path}.{name}".lstrip("."))
        else:
            kwargs[name] = value
    try:
        return dataclasses.replace(default, **kwargs)
    except TypeError as e:
        raise ConfigError(f"Invalid {path or 'config'}: {e}") from e


def build_experiment(raw: Dict[str, Any] | None = None) -> ExperimentConfig:
    """Apply the selected profile, overlay the raw mapping and validate."""
    raw = dict(raw or {})
    raw.setdefault("version", SCHEMA_VERSION)
    profile = raw.get("profile", "desk")
    if profile not in PROFILES:
        raise ConfigError(f"Unknown profile {profile}, expected one of {sorted(PROFILES)}")
    merged = _merge(PROFILES[profile], raw)
    cfg = _build(ExperimentConfig(), merged, "")
    cfg.validate()
    if profile == "full":
        logger.warning(
            "Full-scale profile selected: generative fitting over joint dims of "
            "several hundred is slow and memory hungry on a CPU"
        )
    return cfg


def get_config(config_path: str | None = None) -> ExperimentConfig:
    return build_experiment(load_config(config_path))


def to_dict(obj: Any) -> Dict[str, Any]:
    return dataclasses.asdict(obj)


def env_from_dict(data: Dict[str, Any]) -> EnvConfig:
    cfg = _build(EnvConfig(), data, "env")
    cfg.validate()
    return cfg


def env_hash(cfg: EnvConfig) -> str:
    """Short sha256 over the canonical JSON of the env config."""
    blob = json.dumps(to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def thread_cap() -> int | None:
    value = os.getenv("DETERRA_THREADS")
    if not value:
        return None
    try:
        n = int(value)
    except ValueError as e:
        raise ConfigError(f"DETERRA_THREADS must be an integer, got {value}") from e
    if n < 1:
        raise ConfigError("DETERRA_THREADS must be >= 1")
    return n
