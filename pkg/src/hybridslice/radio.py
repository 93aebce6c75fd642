"""
Downlink radio model: pathloss, SINR and per-TTI achievable rates.

Two rate regimes are provided:

- long packets (eMBB): Shannon rate, ``dt * B * log2(1 + sinr)``
- short packets (uRLLC): finite-blocklength normal approximation,
  ``dt * B * [log2(1 + sinr) - sqrt(V / l) * Qinv(eps) * log2(e)]``
  with ``V = 1 - 1 / (1 + sinr)**2``.

All rate functions accept scalars or numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc, erfcinv

LOG2_E = math.log2(math.e)
SYMBOLS_PER_RB = 168  # 12 subcarriers x 14 OFDM symbols per TTI

FADING_MODELS = ("none", "rayleigh")
PATHLOSS_MODELS = ("macro-128.1-37.6",)


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class ChannelParams:
    """Cell-wide PHY parameters."""

    tx_power: float = dbm_to_watts(43.0)
    rb_bandwidth: float = 180e3
    num_rbs: int = 100
    noise_psd: float = dbm_to_watts(-174.0)
    tti_duration: float = 1e-3
    pathloss_model: str = "macro-128.1-37.6"
    shadowing_stddev: float = 8.0
    fading: str = "rayleigh"

    def __post_init__(self):
        if self.tx_power <= 0:
            raise ValueError(f"tx_power must be > 0, got {self.tx_power}")
        if self.rb_bandwidth <= 0:
            raise ValueError(f"rb_bandwidth must be > 0, got {self.rb_bandwidth}")
        if int(self.num_rbs) != self.num_rbs or self.num_rbs < 1:
            raise ValueError(f"num_rbs must be an integer >= 1, got {self.num_rbs}")
        if self.noise_psd <= 0:
            raise ValueError(f"noise_psd must be > 0, got {self.noise_psd}")
        if self.tti_duration <= 0:
            raise ValueError(f"tti_duration must be > 0, got {self.tti_duration}")
        if self.shadowing_stddev < 0:
            raise ValueError("shadowing_stddev must be >= 0")
        if self.fading not in FADING_MODELS:
            raise ValueError(f"fading must be one of {FADING_MODELS}, got {self.fading!r}")
        if self.pathloss_model not in PATHLOSS_MODELS:
            raise ValueError(f"unknown pathloss model {self.pathloss_model!r}")

    @property
    def total_bandwidth(self) -> float:
        return self.num_rbs * self.rb_bandwidth

    @property
    def noise_power(self) -> float:
        """Noise power over the whole band (equal power allocation)."""
        return self.total_bandwidth * self.noise_psd


@dataclass
class LinkState:
    ue_id: int
    distance: float
    shadowing_db: float = 0.0
    fading_gain: float = 1.0
    sinr: float = 0.0

    def __post_init__(self):
        if self.fading_gain < 0:
            raise ValueError("fading_gain must be >= 0")
        if self.sinr < 0:
            raise ValueError("sinr must be >= 0")

    @property
    def gain(self) -> float:
        """Linear channel gain H for the current TTI."""
        return large_scale_gain(self.distance, self.shadowing_db) * self.fading_gain


@dataclass(frozen=True)
class ShortPacketParams:
    error_prob: float = 1e-5
    blocklength: int = SYMBOLS_PER_RB

    def __post_init__(self):
        if not 0.0 < self.error_prob < 1.0:
            raise ValueError(f"error_prob must lie in (0, 1), got {self.error_prob}")
        if self.blocklength < 1:
            raise ValueError(f"blocklength must be >= 1, got {self.blocklength}")


def pathloss_db(distance):
    """Macro-cell pathloss ``128.1 + 37.6 log10(d_km)`` in dB.

    Args:
        distance: BS-UE distance in meters, >= 1.
    """
    d = np.asarray(distance, dtype=float)
    if np.any(d < 1.0) or np.any(~np.isfinite(d)):
        raise ValueError(f"distance must be finite and >= 1 m, got {distance}")
    pl = 128.1 + 37.6 * np.log10(d / 1000.0)
    return float(pl) if pl.ndim == 0 else pl


def large_scale_gain(distance, shadowing_db=0.0):
    """Linear gain from pathloss plus log-normal shadowing (no fading)."""
    loss = np.asarray(pathloss_db(distance)) + np.asarray(shadowing_db, dtype=float)
    g = 10.0 ** (-loss / 10.0)
    return float(g) if np.ndim(g) == 0 else g


def sinr_from_gain(gain, params: ChannelParams):
    return params.tx_power * np.asarray(gain, dtype=float) / params.noise_power


def sinr(link: LinkState, params: ChannelParams) -> float:
    """SINR ``P * H / (W_total * N0)`` of a link for the current TTI."""
    return float(sinr_from_gain(link.gain, params))


def q_function(x):
    return 0.5 * erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))


def inverse_q(p):
    """Inverse Gaussian tail function, ``Q(x) = p``."""
    pa = np.asarray(p, dtype=float)
    if np.any(~(pa > 0.0)) or np.any(~(pa < 1.0)):
        raise ValueError(f"p must lie strictly in (0, 1), got {p}")
    x = math.sqrt(2.0) * erfcinv(2.0 * pa)
    return float(x) if np.ndim(x) == 0 else x


def channel_dispersion(sinr):
    s = np.asarray(sinr, dtype=float)
    c = 1.0 - 1.0 / (1.0 + s) ** 2
    return float(c) if c.ndim == 0 else c


def rate_long(rbs, sinr, params: ChannelParams):
    """Shannon bits delivered in one TTI over ``rbs`` resource blocks."""
    r = params.tti_duration * np.asarray(rbs) * params.rb_bandwidth * np.log2(1.0 + np.asarray(sinr, dtype=float))
    return float(r) if np.ndim(r) == 0 else r


def short_spectral_efficiency(sinr, error_prob, blocklength):
    """Finite-blocklength bits/s/Hz, clamped at zero."""
    return short_se_from_qinv(sinr, inverse_q(error_prob), blocklength)


def short_se_from_qinv(sinr, qinv, blocklength):
    """:func:`short_spectral_efficiency` with ``Qinv(eps)`` already evaluated."""
    s = np.asarray(sinr, dtype=float)
    penalty = np.sqrt(channel_dispersion(s) / np.asarray(blocklength, dtype=float)) * qinv * LOG2_E
    return np.maximum(np.log2(1.0 + s) - penalty, 0.0)


def short_se_scalar(sinr: float, qinv: float, blocklength: int) -> float:
    """Scalar fast path of :func:`short_spectral_efficiency` with ``Qinv(eps)`` precomputed."""
    dispersion = 1.0 - 1.0 / (1.0 + sinr) ** 2
    return max(math.log2(1.0 + sinr) - math.sqrt(dispersion / blocklength) * qinv * LOG2_E, 0.0)


def rate_short(rbs, sinr, sp: ShortPacketParams, params: ChannelParams):
    """Finite-blocklength bits delivered in one TTI over ``rbs`` resource blocks.

    The blocklength is taken from ``sp``; the simulator passes
    ``rbs * SYMBOLS_PER_RB`` for each grant.
    """
    se = short_spectral_efficiency(sinr, sp.error_prob, sp.blocklength)
    r = params.tti_duration * np.asarray(rbs) * params.rb_bandwidth * se
    return float(r) if np.ndim(r) == 0 else r


def short_blocklength(rbs: int) -> int:
    return max(1, int(rbs)) * SYMBOLS_PER_RB
