"""
Epoch-level slicing MDP over a TTI-resolution downlink simulator.

Each ``step`` applies a per-slice RB delta (the common pool absorbs the
difference), simulates ``epoch_ttis`` TTIs and returns the normalized
observation ``[w/W, Q, o, mu]`` per slice plus the reward.

Per-TTI order: arrivals, deadline expiry, dedicated scheduling, common
sharing, common scheduling, service, PF update.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from hybridslice import metrics, radio
from hybridslice.metrics import EpochStats, SlaTarget, SliceEpochStats
from hybridslice.radio import ChannelParams
from hybridslice.scheduler import (
    PF_WINDOW,
    PfState,
    RbGrant,
    edf_schedule,
    pf_schedule,
    residual_demand,
    share_common,
)
from hybridslice.traffic import TrafficModel, UeQueue, expire, generate_arrivals, serve

SCHEDULERS = ("pf", "edf")
RATE_REGIMES = ("long", "short")


class InvariantError(RuntimeError):
    """Raised when the simulator breaks one of its own invariants."""


class UsageError(RuntimeError):
    pass


@dataclass(frozen=True)
class SliceConfig:
    name: str
    num_ues: int
    traffic: TrafficModel
    sla: SlaTarget
    scheduler: str = "pf"
    rate_regime: str = "long"
    alpha: float = 1.0
    isolation_threshold: float = 1.0
    priority: int = 0  # higher is served first from the common pool
    error_prob: float = 1e-5
    random_phase: bool = False

    def __post_init__(self):
        if self.num_ues < 0:
            raise ValueError(f"slice {self.name}: num_ues must be >= 0")
        if self.scheduler not in SCHEDULERS:
            raise ValueError(f"slice {self.name}: scheduler must be one of {SCHEDULERS}")
        if self.rate_regime not in RATE_REGIMES:
            raise ValueError(f"slice {self.name}: rate_regime must be one of {RATE_REGIMES}")
        if self.scheduler == "edf" and self.sla.kind != "delay-reliability":
            raise ValueError(f"slice {self.name}: EDF needs a delay-reliability SLA")
        if not 0.0 < self.isolation_threshold <= 1.0:
            raise ValueError(f"slice {self.name}: isolation_threshold must lie in (0, 1]")
        if not 0.0 < self.error_prob < 1.0:
            raise ValueError(f"slice {self.name}: error_prob must lie in (0, 1)")

    @property
    def offered_load(self) -> float:
        """Aggregate offered traffic in bits/s."""
        return self.traffic.packet_size * self.traffic.rate * self.num_ues


@dataclass(frozen=True)
class Allocation:
    dedicated: Tuple[int, ...]
    common: int

    @property
    def total(self) -> int:
        return sum(self.dedicated) + self.common

    def check(self, num_rbs: int) -> None:
        if any(w < 0 for w in self.dedicated) or self.common < 0:
            raise InvariantError(f"negative pool in {self}")
        if self.total != num_rbs:
            raise InvariantError(f"RB budget broken: {self} sums to {self.total}, W={num_rbs}")


def largest_remainder(weights: Sequence[float], total: int) -> Tuple[int, ...]:
    """Round ``weights * total`` to integers summing exactly to ``total``."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or w.sum() <= 0:
        raise ValueError(f"weights must be nonnegative with a positive sum, got {weights}")
    raw = w / w.sum() * total
    base = np.floor(raw).astype(int)
    short = total - int(base.sum())
    # stable sort keeps lower indices first on equal remainders
    order = np.argsort(-(raw - base), kind="stable")
    for i in order[:short]:
        base[i] += 1
    return tuple(int(x) for x in base)


def traffic_weights(slices: Sequence[SliceConfig]) -> Tuple[float, ...]:
    loads = [s.offered_load for s in slices]
    total = sum(loads)
    return tuple(x / total for x in loads)


@dataclass(frozen=True)
class EnvConfig:
    slices: Tuple[SliceConfig, ...]
    channel: ChannelParams = field(default_factory=ChannelParams)
    epoch_ttis: int = 200
    episode_epochs: int = 200
    initial_common: int = 30
    initial_dedicated: Optional[Tuple[int, ...]] = None
    nvs_weights: Optional[Tuple[float, ...]] = None
    hybrid: bool = True
    beta: float = 5.0
    rho: float = 10.0
    action_set: Tuple[int, ...] = (-5, -2, 0, 2, 5)
    min_dedicated: int = 1
    area_size: float = 500.0
    min_distance: float = 10.0
    pf_window: int = PF_WINDOW

    def __post_init__(self):
        if not self.slices:
            raise ValueError("at least one slice is required")
        if self.epoch_ttis < 1 or self.episode_epochs < 1:
            raise ValueError("epoch_ttis and episode_epochs must be >= 1")
        if self.initial_common < 0 or self.initial_common > self.num_rbs:
            raise ValueError(f"initial_common must lie in [0, W={self.num_rbs}]")
        if 0 not in self.action_set or sorted(self.action_set) != list(self.action_set):
            raise ValueError("action_set must be sorted and contain 0")
        if len(set(abs(a) for a in self.action_set)) * 2 - 1 != len(self.action_set):
            raise ValueError("action_set must be symmetric around 0")
        if self.nvs_weights is not None and len(self.nvs_weights) != len(self.slices):
            raise ValueError("nvs_weights needs one weight per slice")
        self.initial_allocation().check(self.num_rbs)

    @property
    def num_rbs(self) -> int:
        return self.channel.num_rbs

    @property
    def num_slices(self) -> int:
        return len(self.slices)

    def weights(self) -> Tuple[float, ...]:
        return self.nvs_weights if self.nvs_weights is not None else traffic_weights(self.slices)

    def initial_allocation(self) -> Allocation:
        if self.initial_dedicated is not None:
            if len(self.initial_dedicated) != self.num_slices:
                raise ValueError("initial_dedicated needs one count per slice")
            alloc = Allocation(tuple(int(x) for x in self.initial_dedicated), self.initial_common)
            if alloc.total != self.num_rbs:
                raise ValueError(
                    f"RB budget violated (sum of dedicated + common must equal W): initial dedicated {alloc.dedicated} + common "
                    f"{alloc.common} = {alloc.total} != W = {self.num_rbs}"
                )
            return alloc
        pool = self.num_rbs - self.initial_common
        ded = list(largest_remainder(self.weights(), pool))
        # lift starved slices to the floor, taking from the largest pool
        for m in range(len(ded)):
            while ded[m] < self.min_dedicated:
                donor = int(np.argmax(ded))
                if ded[donor] <= self.min_dedicated:
                    raise ValueError("not enough RBs to give every slice its floor")
                ded[donor] -= 1
                ded[m] += 1
        return Allocation(tuple(ded), self.initial_common)

    @property
    def num_actions(self) -> int:
        return len(self.action_set) ** self.num_slices

    @property
    def obs_dim(self) -> int:
        return 4 * self.num_slices


def decode_action(index: int, action_set: Sequence[int], num_slices: int) -> Tuple[int, ...]:
    """Joint action index to per-slice deltas (slice 0 is the most significant digit)."""
    n = len(action_set)
    if not 0 <= index < n**num_slices:
        raise ValueError(f"action index {index} out of range [0, {n ** num_slices})")
    digits = []
    for _ in range(num_slices):
        index, d = divmod(index, n)
        digits.append(action_set[d])
    return tuple(reversed(digits))


def encode_action(deltas: Sequence[int], action_set: Sequence[int]) -> int:
    n = len(action_set)
    index = 0
    for d in deltas:
        index = index * n + list(action_set).index(d)
    return index


def apply_action(alloc: Allocation, deltas: Sequence[int], min_dedicated: int = 1) -> Tuple[Allocation, bool]:
    """Move RBs between each slice and the common pool.

    Infeasible components are zeroed one slice at a time: a decrease that
    would push a slice under ``min_dedicated`` is dropped, then increases
    are funded in slice order from the common pool plus any released RBs
    and dropped if the pool runs dry.

    Returns:
        The new allocation and whether any delta was projected away.
    """
    if len(deltas) != len(alloc.dedicated):
        raise ValueError("one delta per slice is required")
    kept = list(deltas)
    for m, (w, d) in enumerate(zip(alloc.dedicated, deltas)):
        if d < 0 and w + d < min_dedicated:
            kept[m] = 0
    available = alloc.common - sum(d for d in kept if d < 0)
    for m, d in enumerate(kept):
        if d > 0:
            if d <= available:
                available -= d
            else:
                kept[m] = 0
    new = Allocation(
        tuple(w + d for w, d in zip(alloc.dedicated, kept)),
        alloc.common - sum(kept),
    )
    return new, kept != list(deltas)


@dataclass
class _Ue:
    id: int
    slice: int
    distance: float
    shadowing_db: float
    phase: int = 0


class SlicingEnv:
    """Single-cell downlink slicing environment.

    Args:
        config: scenario and MDP parameters.
        record_trace: keep a per-TTI list of grants in ``self.trace``.
        record_events: keep every served chunk ``(tti, ue, packet, bits)``
            in ``self.events``.
    """

    def __init__(self, config: EnvConfig, record_trace: bool = False, record_events: bool = False):
        self.config = config
        self.record_trace = record_trace
        self.record_events = record_events
        self.trace: list = []
        self.events: list = []
        self.allocation: Optional[Allocation] = None
        self.epoch = 0
        self.tti = 0
        self.s_max = 0.0
        self.last_stats: Optional[EpochStats] = None
        self._done = True
        cfg = config
        self._slice_ues: List[List[int]] = []
        start = 0
        for s in cfg.slices:
            self._slice_ues.append(list(range(start, start + s.num_ues)))
            start += s.num_ues
        self.num_ues = start
        self._slice_of = np.concatenate(
            [np.full(s.num_ues, m, dtype=int) for m, s in enumerate(cfg.slices)]
        ) if self.num_ues else np.zeros(0, dtype=int)
        self._priority = sorted(range(cfg.num_slices), key=lambda m: (-cfg.slices[m].priority, m))

    @property
    def num_actions(self) -> int:
        return self.config.num_actions

    @property
    def obs_dim(self) -> int:
        return self.config.obs_dim

    @property
    def done(self) -> bool:
        return self._done

    # -- episode control -------------------------------------------------

    def reset(self, seed: Optional[int] = None) -> np.ndarray:
        cfg = self.config
        ss = np.random.SeedSequence(seed)
        place, fading, arrivals, calib = (np.random.default_rng(s) for s in ss.spawn(4))
        self._rng_fading = fading
        self._rng_arrivals = arrivals
        half = cfg.area_size / 2.0
        xy = place.uniform(-half, half, size=(self.num_ues, 2))
        dist = np.maximum(np.hypot(xy[:, 0], xy[:, 1]), cfg.min_distance)
        shadow = place.normal(0.0, cfg.channel.shadowing_stddev, size=self.num_ues)
        self.ues = []
        for n in range(self.num_ues):
            s = cfg.slices[self._slice_of[n]]
            phase = 0
            if s.traffic.kind == "periodic" and s.random_phase:
                phase = int(place.integers(s.traffic.period_ttis(cfg.channel.tti_duration)))
            self.ues.append(_Ue(n, int(self._slice_of[n]), float(dist[n]), float(shadow[n]), phase))
        self._base_snr = np.asarray(
            radio.sinr_from_gain(radio.large_scale_gain(dist, shadow), cfg.channel), dtype=float
        ).reshape(self.num_ues)
        self.queues = [UeQueue(n) for n in range(self.num_ues)]
        self.pf = {n: PfState(n) for n in range(self.num_ues)}
        self._ids = itertools.count()
        self.trace = []
        self.events = []
        self.tti = 0
        self.s_max = self._calibrate_s_max(calib)
        self.allocation = cfg.initial_allocation()
        self.allocation.check(cfg.num_rbs)
        self.last_stats = self._simulate_epoch(self.allocation)
        self.epoch = 0
        self._done = False
        return self.observation(self.allocation, self.last_stats)

    def _calibrate_s_max(self, rng: np.random.Generator) -> float:
        """SE of granting all W RBs to the best-SINR UE every TTI for one epoch."""
        cfg = self.config
        if self.num_ues == 0:
            return 0.0
        bits = 0.0
        for _ in range(cfg.epoch_ttis):
            best = float(np.max(self._base_snr * self._draw_fading(rng)))
            bits += radio.rate_long(cfg.num_rbs, best, cfg.channel)
        return bits / cfg.num_rbs

    def _draw_fading(self, rng: np.random.Generator) -> np.ndarray:
        if self.config.channel.fading == "rayleigh":
            return rng.exponential(1.0, size=self.num_ues)
        return np.ones(self.num_ues)

    def step(self, action) -> Tuple[np.ndarray, float, dict]:
        """Apply ``action`` (joint index or per-slice deltas) and run one epoch."""
        if self._done:
            raise UsageError("step() called on a finished or un-reset episode; call reset()")
        cfg = self.config
        if isinstance(action, (int, np.integer)):
            requested = decode_action(int(action), cfg.action_set, cfg.num_slices)
        else:
            requested = tuple(int(a) for a in action)
            if any(a not in cfg.action_set for a in requested) or len(requested) != cfg.num_slices:
                raise ValueError(f"invalid slicing action {requested}")
        alloc, projected = apply_action(self.allocation, requested, cfg.min_dedicated)
        alloc.check(cfg.num_rbs)
        applied = tuple(n - o for n, o in zip(alloc.dedicated, self.allocation.dedicated))
        self.allocation = alloc
        stats = self._simulate_epoch(alloc)
        r = self.reward(stats)
        self.last_stats = stats
        self.epoch += 1
        self._done = self.epoch >= cfg.episode_epochs
        info = dict(
            epoch=self.epoch,
            stats=stats,
            allocation=alloc,
            requested=requested,
            applied=applied,
            projected=projected,
        )
        return self.observation(alloc, stats), r, info

    def reward(self, stats: EpochStats) -> float:
        cfg = self.config
        return metrics.reward(
            stats.q,
            stats.spectral_eff_norm,
            stats.isolation,
            [s.alpha for s in cfg.slices],
            cfg.beta,
            cfg.rho,
            [s.sla.q_threshold for s in cfg.slices],
            [s.isolation_threshold for s in cfg.slices],
        )

    def observation(self, alloc: Allocation, stats: EpochStats) -> np.ndarray:
        W = self.config.num_rbs
        obs = []
        for w, s in zip(alloc.dedicated, stats.slices):
            obs.extend((w / W, s.q_sla, s.isolation, s.utilization))
        return np.asarray(obs, dtype=float)

    # -- TTI simulation --------------------------------------------------

    def _simulate_epoch(self, alloc: Allocation) -> EpochStats:
        cfg = self.config
        ch = cfg.channel
        dt = ch.tti_duration
        M = cfg.num_slices
        for q in self.queues:
            q.new_epoch()
        ded_used = [0] * M
        com_used = [0] * M
        log = self.events if self.record_events else None
        slice_cfgs = cfg.slices
        per_rb_scale = dt * ch.rb_bandwidth
        short_idx = [n for n in range(self.num_ues) if slice_cfgs[self._slice_of[n]].rate_regime == "short"]
        long_idx = [n for n in range(self.num_ues) if slice_cfgs[self._slice_of[n]].rate_regime == "long"]
        qinv = [radio.inverse_q(s.error_prob) for s in slice_cfgs]
        short_qinv = np.array([qinv[self._slice_of[n]] for n in short_idx])
        periods = [s.traffic.period_ttis(dt) for s in slice_cfgs]

        for _ in range(cfg.epoch_ttis):
            tti = self.tti
            snr = self._base_snr * self._draw_fading(self._rng_fading)
            per_rb = np.zeros(self.num_ues)
            if long_idx:
                per_rb[long_idx] = per_rb_scale * np.log2(1.0 + snr[long_idx])
            if short_idx:
                per_rb[short_idx] = per_rb_scale * radio.short_se_from_qinv(snr[short_idx], short_qinv, radio.SYMBOLS_PER_RB)
            per_rb_l = per_rb.tolist()
            snr_l = snr.tolist()

            # arrivals and expiry
            for m, s in enumerate(slice_cfgs):
                ues = self._slice_ues[m]
                if not ues:
                    continue
                periodic = s.traffic.kind == "periodic"
                for n in ues:
                    if periodic and (tti - self.ues[n].phase) % periods[m]:
                        continue
                    self.queues[n].push(
                        generate_arrivals(s.traffic, tti, self._rng_arrivals, ue_id=n, dt=dt,
                                          phase=self.ues[n].phase, ids=self._ids)
                    )
                if s.sla.kind == "delay-reliability":
                    for n in ues:
                        expire(self.queues[n], tti, s.sla.d_max, dt)

            # dedicated pools
            rate_map = dict(enumerate(per_rb_l))
            ded_grants: List[dict] = []
            demands = [0] * M
            queued = {n: self.queues[n].queued_bits for n in range(self.num_ues)}
            for m, s in enumerate(slice_cfgs):
                g = self._schedule(m, alloc.dedicated[m], rate_map, queued, None, tti)
                ded_grants.append(g)
                demands[m] = residual_demand(self._slice_ues[m], queued, rate_map, g)

            # common pool
            com_grants: List[dict] = [{} for _ in range(M)]
            if cfg.hybrid and alloc.common > 0:
                shares = share_common(alloc.common, demands, self._priority)
                for m in range(M):
                    if shares[m] > 0:
                        credit = {n: k * per_rb_l[n] for n, k in ded_grants[m].items()}
                        com_grants[m] = self._schedule(m, shares[m], rate_map, queued, credit, tti)

            self._check_tti(alloc, ded_grants, com_grants, tti)

            # service
            served = [0.0] * self.num_ues
            for m, s in enumerate(slice_cfgs):
                dg, cg = ded_grants[m], com_grants[m]
                ded_used[m] += sum(dg.values())
                com_used[m] += sum(cg.values())
                for n in set(dg) | set(cg):
                    k = dg.get(n, 0) + cg.get(n, 0)
                    if s.rate_regime == "long" or k == 1:
                        budget = k * per_rb_l[n]
                    else:
                        budget = per_rb_scale * k * radio.short_se_scalar(
                            snr_l[n], qinv[m], radio.short_blocklength(k)
                        )
                    before = self.queues[n].served_bits
                    serve(self.queues[n], budget, tti, log)
                    served[n] = self.queues[n].served_bits - before
                if s.scheduler == "pf":
                    for n in self._slice_ues[m]:
                        self.pf[n].update(served[n], cfg.pf_window)
            self.tti += 1

        return self._epoch_stats(alloc, ded_used, com_used)

    def _schedule(self, m, rbs, rate_map, queued, credit, tti):
        s = self.config.slices[m]
        ues = self._slice_ues[m]
        if rbs <= 0 or not ues:
            return {}
        if s.scheduler == "pf":
            return pf_schedule(ues, rbs, rate_map, self.pf, queued, credit, self.config.pf_window)
        return edf_schedule(
            [self.queues[n] for n in ues], rbs, rate_map, tti, s.sla.d_max,
            self.config.channel.tti_duration, credit,
        )

    def _check_tti(self, alloc, ded_grants, com_grants, tti) -> None:
        total = 0
        common = 0
        grants = []
        for m in range(self.config.num_slices):
            d = sum(ded_grants[m].values())
            if d > alloc.dedicated[m]:
                raise InvariantError(f"TTI {tti}: slice {m} granted {d} dedicated RBs > w_m={alloc.dedicated[m]}")
            for n in set(ded_grants[m]) | set(com_grants[m]):
                if self._slice_of[n] != m:
                    raise InvariantError(f"TTI {tti}: UE {n} served from slice {m}'s pools")
                k_d, k_c = ded_grants[m].get(n, 0), com_grants[m].get(n, 0)
                if k_d < 0 or k_c < 0:
                    raise InvariantError(f"TTI {tti}: negative grant for UE {n}")
                if self.record_trace:
                    grants.append((m, RbGrant(n, k_d, k_c)))
            c = sum(com_grants[m].values())
            common += c
            total += d + c
        if common > alloc.common:
            raise InvariantError(f"TTI {tti}: {common} common RBs granted > w_c={alloc.common}")
        if total > self.config.num_rbs:
            raise InvariantError(f"TTI {tti}: {total} RBs granted > W={self.config.num_rbs}")
        if self.record_trace:
            self.trace.append(TtiRecord(tti, self.epoch, alloc, grants))

    def _epoch_stats(self, alloc: Allocation, ded_used, com_used) -> EpochStats:
        cfg = self.config
        T = cfg.epoch_ttis
        dt = cfg.channel.tti_duration
        slices = []
        total_bits = 0.0
        for m, s in enumerate(cfg.slices):
            qs = [self.queues[n] for n in self._slice_ues[m]]
            bits = [q.served_bits for q in qs]
            total_bits += sum(bits)
            if s.sla.kind == "throughput":
                q_sla = metrics.q_rate(bits, s.sla.rate_threshold, T, dt)
            else:
                q_sla = metrics.q_delay([q.delivered_count for q in qs], [q.dropped_count for q in qs])
            w_cm = com_used[m] / T
            slices.append(
                SliceEpochStats(
                    name=s.name,
                    q_sla=q_sla,
                    isolation=metrics.isolation(alloc.dedicated[m], w_cm),
                    utilization=metrics.utilization(ded_used[m], alloc.dedicated[m], T),
                    dedicated_rbs=alloc.dedicated[m],
                    common_used=w_cm,
                    delivered_bits=float(sum(bits)),
                )
            )
        s_k, s_norm = metrics.spectral_efficiency(total_bits, cfg.num_rbs, self.s_max)
        q = [s.q_sla for s in slices]
        u = metrics.utility(
            q, s_k, [s.alpha for s in cfg.slices], cfg.beta, [s.sla.q_threshold for s in cfg.slices]
        )
        return EpochStats(slices=slices, spectral_eff=s_k, spectral_eff_norm=s_norm, utility=u)


@dataclass
class TtiRecord:
    tti: int
    epoch: int
    allocation: Allocation
    grants: list  # (slice index, RbGrant)
