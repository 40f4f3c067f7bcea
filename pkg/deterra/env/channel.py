"""
Synthetic multipath downlink channels and beam-domain measurements.

Each (AP, UE) pair gets a large-scale gain drawn once per episode and an
L-path geometric small-scale part. Successive slots follow a first-order
autoregression whose innovation has the same law as a fresh draw, so the
per-entry variance is stationary.
"""

from dataclasses import dataclass

import numpy as np

from ..config import ChannelConfig, EnvConfig


def build_codebook(M: int) -> np.ndarray:
    """M x M DFT codebook for a uniform linear array, column m is f_m."""
    if M < 1:
        raise ValueError("codebook size must be >= 1")
    n = np.arange(M)
    return np.exp(2j * np.pi * np.outer(n, n) / M) / np.sqrt(M)


@dataclass
class ChannelState:
    h: np.ndarray  # complex, (B, U, K, M)
    gain: np.ndarray  # linear large-scale gain, (B, U)


def _path_powers(ch: ChannelConfig) -> np.ndarray:
    p = np.exp(-np.arange(ch.paths) / ch.path_decay)
    return p / p.sum()


def _draw_small_scale(cfg: EnvConfig, gain: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    ch = cfg.channel
    B, U, K, M, L = cfg.B, cfg.U, cfg.K, cfg.M, ch.paths
    half = np.deg2rad(ch.angle_spread_deg) / 2.0
    theta = rng.uniform(-half, half, size=(B, U, L))
    alpha = (rng.standard_normal((B, U, L)) + 1j * rng.standard_normal((B, U, L))) / np.sqrt(2.0)
    alpha *= np.sqrt(_path_powers(ch))
    tau = rng.uniform(0.0, ch.delay_spread_s, size=(B, U, L))

    steering = np.exp(1j * np.pi * np.arange(M)[None, None, None, :] * np.sin(theta)[..., None])
    # (B, U, K, L) phase of each path on each subband
    phase = np.exp(
        -2j * np.pi * np.arange(K)[None, None, :, None] * cfg.subband_bandwidth_hz * tau[:, :, None, :]
    )
    weights = alpha[:, :, None, :] * phase
    h = np.einsum("bukl,bulm->bukm", weights, steering)
    return h * np.sqrt(gain)[:, :, None, None]


def channel_reset(cfg: EnvConfig, rng: np.random.Generator) -> ChannelState:
    ch = cfg.channel
    gain_db = rng.uniform(ch.path_gain_db_min, ch.path_gain_db_max, size=(cfg.B, cfg.U))
    gain = 10.0 ** (gain_db / 10.0)
    return ChannelState(h=_draw_small_scale(cfg, gain, rng), gain=gain)


def channel_advance(cfg: EnvConfig, ch: ChannelState, rng: np.random.Generator) -> ChannelState:
    a = cfg.channel.correlation
    if a >= 1.0:
        return ChannelState(h=ch.h.copy(), gain=ch.gain)
    innovation = _draw_small_scale(cfg, ch.gain, rng)
    return ChannelState(h=a * ch.h + np.sqrt(1.0 - a * a) * innovation, gain=ch.gain)


def compute_pbm(cfg: EnvConfig, ch: ChannelState, codebook: np.ndarray | None = None) -> np.ndarray:
    """
    |h^H f_m| for every (b, u, k, m), flattened with b outermost and m
    innermost. The order is part of the dataset layout.
    """
    if codebook is None:
        codebook = build_codebook(cfg.M)
    return np.abs(np.conj(ch.h) @ codebook).reshape(-1)


def reference_amplitude(cfg: EnvConfig) -> float:
    """Typical PBM magnitude at the middle of the large-scale gain range."""
    mid_db = 0.5 * (cfg.channel.path_gain_db_min + cfg.channel.path_gain_db_max)
    return float(np.sqrt(10.0 ** (mid_db / 10.0)))
