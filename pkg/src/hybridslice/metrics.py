"""Epoch-level SLA, isolation, utilization, spectral efficiency and utility."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

log = logging.getLogger(__name__)

SLA_KINDS = ("throughput", "delay-reliability")


@dataclass(frozen=True)
class SlaTarget:
    kind: str
    rate_threshold: float = 0.0  # bits/s, throughput SLAs
    d_max: float = 0.0  # seconds, delay SLAs
    reliability_target: float = 1.0
    q_threshold: float = 1.0

    def __post_init__(self):
        if self.kind not in SLA_KINDS:
            raise ValueError(f"SLA kind must be one of {SLA_KINDS}, got {self.kind!r}")
        if self.kind == "throughput" and not self.rate_threshold > 0:
            raise ValueError("throughput SLA needs rate_threshold > 0")
        if self.kind == "delay-reliability" and not self.d_max > 0:
            raise ValueError("delay-reliability SLA needs d_max > 0")
        for name in ("reliability_target", "q_threshold"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")


@dataclass
class SliceEpochStats:
    name: str
    q_sla: float
    isolation: float
    utilization: float
    dedicated_rbs: int
    common_used: float  # mean common RBs per TTI
    delivered_bits: float = 0.0


@dataclass
class EpochStats:
    slices: List[SliceEpochStats] = field(default_factory=list)
    spectral_eff: float = 0.0
    spectral_eff_norm: float = 0.0
    utility: float = 0.0

    @property
    def q(self) -> List[float]:
        return [s.q_sla for s in self.slices]

    @property
    def isolation(self) -> List[float]:
        return [s.isolation for s in self.slices]


STATS_COLUMNS = (
    "episode",
    "epoch",
    "slice",
    "q_sla",
    "isolation",
    "utilization",
    "dedicated_rbs",
    "common_used",
    "delivered_bits",
    "spectral_eff",
    "spectral_eff_norm",
    "utility",
)


def stats_rows(episode: int, epoch: int, stats: EpochStats) -> List[dict]:
    """Long-format rows: one per slice plus a global row with ``slice='*'``."""
    rows = []
    for s in stats.slices:
        rows.append(
            dict(
                episode=episode,
                epoch=epoch,
                slice=s.name,
                q_sla=s.q_sla,
                isolation=s.isolation,
                utilization=s.utilization,
                dedicated_rbs=s.dedicated_rbs,
                common_used=s.common_used,
                delivered_bits=s.delivered_bits,
                spectral_eff="",
                spectral_eff_norm="",
                utility="",
            )
        )
    rows.append(
        dict(
            episode=episode,
            epoch=epoch,
            slice="*",
            q_sla="",
            isolation="",
            utilization="",
            dedicated_rbs="",
            common_used="",
            delivered_bits=sum(s.delivered_bits for s in stats.slices),
            spectral_eff=stats.spectral_eff,
            spectral_eff_norm=stats.spectral_eff_norm,
            utility=stats.utility,
        )
    )
    return rows


def q_rate(ue_bits: Sequence[float], rate_threshold: float, num_ttis: int, dt: float = 1e-3) -> float:
    """Throughput SLA ratio: mean over UEs of ``min(bits / (R_th * T * dt), 1)``.

    ``ue_bits`` holds each UE's bits delivered over the epoch.
    """
    if num_ttis < 1:
        raise ValueError("num_ttis must be >= 1")
    if len(ue_bits) == 0:
        log.debug("q_rate on an empty slice, treating as satisfied")
        return 1.0
    target = rate_threshold * num_ttis * dt
    return float(np.mean(np.minimum(np.asarray(ue_bits, dtype=float) / target, 1.0)))


def q_delay(delivered: Sequence[int], dropped: Sequence[int]) -> float:
    """Reliability SLA ratio: mean over UEs of on-time fraction of resolved packets.

    A UE with no resolved packets in the epoch counts as fully reliable.
    """
    if len(delivered) != len(dropped):
        raise ValueError("delivered and dropped must have one entry per UE")
    if len(delivered) == 0:
        return 1.0
    theta = [d / (d + x) if d + x > 0 else 1.0 for d, x in zip(delivered, dropped)]
    return float(sum(theta) / len(theta))


def isolation(w_m: float, w_cm: float) -> float:
    if w_m < 0 or w_cm < 0:
        raise ValueError("resource counts must be nonnegative")
    if w_m + w_cm == 0:
        log.debug("isolation with no resources at all, treating as fully isolated")
        return 1.0
    return w_m / (w_m + w_cm)


def spectral_efficiency(total_bits: float, num_rbs: int, s_max: float = 0.0):
    """Epoch SE ``sum_t sum_n r_nt / W`` and its normalization by ``s_max``.

    Returns:
        ``(S_k, S_k / s_max)``; the normalized value is 0 when ``s_max`` is 0.
    """
    s_k = total_bits / num_rbs
    return s_k, (s_k / s_max if s_max > 0 else 0.0)


def utilization(granted_rbs: float, w_m: int, num_ttis: int) -> float:
    """Fraction of a slice's dedicated RB-TTIs actually granted."""
    if w_m <= 0:
        log.debug("utilization of an empty pool, treating as 1")
        return 1.0
    return min(1.0, granted_rbs / (w_m * num_ttis))


def sla_indicator(q: Sequence[float], q_thresholds: Sequence[float]) -> int:
    return int(all(qm >= th for qm, th in zip(q, q_thresholds)))


def utility(q: Sequence[float], s_k: float, alphas: Sequence[float], beta: float, q_thresholds: Sequence[float]) -> float:
    """Epoch utility ``sum_m alpha_m Q_m + beta * prod_m 1(Q_m >= th_m) * S_k``."""
    return float(sum(a * qm for a, qm in zip(alphas, q)) + beta * sla_indicator(q, q_thresholds) * s_k)


def reward(
    q: Sequence[float],
    s_norm: float,
    iso: Sequence[float],
    alphas: Sequence[float],
    beta: float,
    rho: float,
    q_thresholds: Sequence[float],
    iso_thresholds: Sequence[float],
) -> float:
    """Agent reward: exponential SLA term, gated SE bonus, isolation hinge penalty."""
    gain = sum(a * math.exp(qm) for a, qm in zip(alphas, q))
    bonus = beta * sla_indicator(q, q_thresholds) * s_norm
    penalty = rho * sum(max(0.0, th - o) for th, o in zip(iso_thresholds, iso))
    return float(gain + bonus - penalty)
