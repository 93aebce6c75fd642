"""Comparison allocators: NVS static slicing, Hard-DQN config, exhaustive OP search."""

from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from hybridslice.env import Allocation, EnvConfig, SlicingEnv, encode_action, largest_remainder


@dataclass(frozen=True)
class NvsWeights:
    weights: Tuple[float, ...]

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or w.sum() <= 0:
            raise ValueError(f"NVS weights must be nonnegative with a positive sum, got {self.weights}")
        object.__setattr__(self, "weights", tuple(float(x) for x in w / w.sum()))


def nvs_alloc(weights: NvsWeights, num_rbs: int) -> Allocation:
    """Static weight-based split of all W RBs, no common pool."""
    return Allocation(largest_remainder(weights.weights, num_rbs), 0)


def search_grid(num_rbs: int, num_slices: int, step: int) -> List[Allocation]:
    """Every ``(w_1..w_M, w_c)`` on multiples of ``step`` that sums to W.

    When ``step`` does not divide W the common pool takes the remainder.
    """
    if step < 1:
        raise ValueError("step must be >= 1")
    levels = range(0, num_rbs + 1, step)
    out = []
    for ded in itertools.product(levels, repeat=num_slices):
        common = num_rbs - sum(ded)
        if common >= 0:
            out.append(Allocation(tuple(ded), common))
    return out


def hard_dqn_config(base: EnvConfig) -> EnvConfig:
    """Purely hard variant: no common pool, its RBs spread over the slices.

    The redistribution is proportional to the base initial split, with
    largest-remainder rounding.
    """
    init = base.initial_allocation()
    ded = largest_remainder(init.dedicated, base.num_rbs) if init.common else init.dedicated
    return dataclasses.replace(base, hybrid=False, initial_common=0, initial_dedicated=tuple(ded))


def static_config(base: EnvConfig, alloc: Allocation) -> EnvConfig:
    return dataclasses.replace(base, initial_dedicated=tuple(alloc.dedicated), initial_common=alloc.common)


@dataclass
class StaticResult:
    allocation: Allocation
    seed: int
    utility: float  # mean per-epoch utility
    reward: float  # mean per-epoch reward
    min_isolation: Tuple[float, ...]
    mean_isolation: Tuple[float, ...]
    records: list


def evaluate_static(
    base: EnvConfig,
    alloc: Allocation,
    seed,
    keep_records: bool = False,
) -> StaticResult:
    """Run one episode with the allocation frozen (every action is a no-op)."""
    cfg = static_config(base, alloc)
    env = SlicingEnv(cfg)
    env.reset(seed)
    noop = encode_action([0] * cfg.num_slices, cfg.action_set)
    us, rs, iso, records = [], [], [], []
    while not env.done:
        _, r, info = env.step(noop)
        st = info["stats"]
        us.append(st.utility)
        rs.append(r)
        iso.append(st.isolation)
        if keep_records:
            records.append((r, info))
    iso_a = np.asarray(iso)
    return StaticResult(
        allocation=alloc,
        seed=seed if isinstance(seed, int) else -1,
        utility=float(np.mean(us)),
        reward=float(np.mean(rs)),
        min_isolation=tuple(iso_a.min(axis=0)),
        mean_isolation=tuple(iso_a.mean(axis=0)),
        records=records,
    )


@dataclass
class OpResult:
    allocation: Allocation
    utility: float
    reward: float
    audit: List[dict]  # one row per (candidate, seed)
    scores: List[Tuple[Allocation, float, float]]  # per candidate: mean utility, mean reward


def op_search(
    config: EnvConfig,
    grid: Sequence[Allocation],
    seeds: Sequence,
    isolation_constrained: bool = False,
    progress: Optional[Callable[[int, int], None]] = None,
) -> OpResult:
    """Exhaustive search for the best static allocation by mean utility.

    Each candidate runs one full episode per seed. Ties go to the larger
    common pool, then to the lexicographically smaller dedicated tuple.
    With ``isolation_constrained`` candidates whose mean isolation misses
    a slice threshold rank below every candidate that meets all of them.
    """
    if not grid:
        raise ValueError("empty search grid")
    thresholds = [s.isolation_threshold for s in config.slices]
    audit, scores = [], []
    best_key, best = None, None
    for ci, cand in enumerate(grid):
        cand.check(config.num_rbs)
        results = [evaluate_static(config, cand, s) for s in seeds]
        u = float(np.mean([r.utility for r in results]))
        rw = float(np.mean([r.reward for r in results]))
        iso = np.mean([r.mean_isolation for r in results], axis=0)
        feasible = all(o >= th for o, th in zip(iso, thresholds))
        for s, r in zip(seeds, results):
            audit.append(
                dict(candidate=ci, dedicated="/".join(map(str, cand.dedicated)), common=cand.common,
                     seed=s, utility=r.utility, reward=r.reward)
            )
        scores.append((cand, u, rw))
        key = (feasible if isolation_constrained else True, u, cand.common, tuple(-w for w in cand.dedicated))
        if best_key is None or key > best_key:
            best_key, best = key, (cand, u, rw)
        if progress is not None:
            progress(ci + 1, len(grid))
    return OpResult(allocation=best[0], utility=best[1], reward=best[2], audit=audit, scores=scores)
