"""Action decoding, SINR and finite-blocklength bit counts."""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import softmax

from ..config import EnvConfig
from ..errors import DimensionError
from ..mathcore import gaussian_q_inv
from .channel import ChannelState, build_codebook

LOG2E_SQ = np.log2(np.e) ** 2


@dataclass
class RawAction:
    """Policy output, three (B*U*K,) blocks with entries in (-1, 1)."""

    zeta_hat: np.ndarray
    i_hat: np.ndarray
    p_hat: np.ndarray

    @classmethod
    def from_vector(cls, cfg: EnvConfig, vec: np.ndarray) -> "RawAction":
        vec = np.asarray(vec, dtype=np.float64).reshape(-1)
        if vec.shape[0] != cfg.action_dim:
            raise DimensionError(f"action has length {vec.shape[0]}, expected {cfg.action_dim}")
        n = cfg.links
        return cls(zeta_hat=vec[:n], i_hat=vec[n : 2 * n], p_hat=vec[2 * n :])

    def vector(self) -> np.ndarray:
        return np.concatenate([self.zeta_hat, self.i_hat, self.p_hat])


@dataclass
class DecodedAction:
    zeta: np.ndarray  # int {0,1}, (B, U, K)
    beam_idx: np.ndarray  # int in [0, M-1], (B, U, K)
    power: np.ndarray  # watts, (B, U, K), sums to P_max per AP

    def energy(self, slot_seconds: float) -> float:
        return float(np.sum(self.zeta * self.power) * slot_seconds)


def decode_action(cfg: EnvConfig, raw: RawAction) -> DecodedAction:
    shape = (cfg.B, cfg.U, cfg.K)
    blocks = [np.asarray(b, dtype=np.float64) for b in (raw.zeta_hat, raw.i_hat, raw.p_hat)]
    for b in blocks:
        if b.size != cfg.links:
            raise DimensionError(f"action block has {b.size} entries, expected {cfg.links}")
        if np.any(np.abs(b) > 1.0):
            raise ValueError("raw action entries must lie in (-1, 1)")
    zeta_hat, i_hat, p_hat = (b.reshape(shape) for b in blocks)

    zeta = (zeta_hat >= 0.0).astype(np.int64)
    beam = np.clip(np.floor((i_hat + 1.0) * cfg.M / 2.0), 0, cfg.M - 1).astype(np.int64)
    power = cfg.p_max * softmax(p_hat.reshape(cfg.B, -1), axis=1).reshape(shape)
    return DecodedAction(zeta=zeta, beam_idx=beam, power=power)


def compute_sinr(
    cfg: EnvConfig,
    ch: ChannelState,
    act: DecodedAction,
    codebook: np.ndarray | None = None,
    noise_power: float | None = None,
) -> np.ndarray:
    """SINR per (UE, subband), shape (U, K)."""
    if codebook is None:
        codebook = build_codebook(cfg.M)
    sigma2 = cfg.noise_power if noise_power is None else noise_power
    # (B, V, K, M) selected codeword of the stream meant for UE v
    beams = np.moveaxis(codebook[:, act.beam_idx], 0, -1)
    # g[b, u, v, k] = h_{b,u,k}^H f_{b,v,k}
    g = np.einsum("bukm,bvkm->buvk", np.conj(ch.h), beams)
    amp = act.zeta * np.sqrt(act.power / cfg.C)
    y = np.einsum("bvk,buvk->uvk", amp, g)
    rx = np.abs(y) ** 2
    signal = np.einsum("uuk->uk", rx)
    interference = rx.sum(axis=1) - signal
    return signal / (interference + sigma2)


@lru_cache(maxsize=32)
def _q_inv(eps: float) -> float:
    return gaussian_q_inv(eps)


def compute_bits(cfg: EnvConfig, gamma: np.ndarray) -> np.ndarray | float:
    """
    Finite-blocklength bits per UE over all its subbands. gamma is (U, K)
    or a single (K,) row. Clamped at 0.
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    if np.any(gamma < 0):
        raise ValueError("SINR must be non-negative")
    blocklength = cfg.C * cfg.N
    shannon = blocklength * np.log2(1.0 + gamma).sum(axis=-1)
    dispersion = LOG2E_SQ * (1.0 - (1.0 + gamma) ** -2)
    penalty = _q_inv(cfg.eps) * np.sqrt(blocklength * dispersion.sum(axis=-1))
    bits = np.maximum(shannon - penalty, 0.0)
    return float(bits) if bits.ndim == 0 else bits
