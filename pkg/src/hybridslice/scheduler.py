"""
Intra-slice RB scheduling and common-pool sharing.

Schedulers work from a per-RB rate estimate for each UE (bits one RB
carries this TTI) and return ``{ue_id: rbs}`` grant maps. ``credit_bits``
lets a second pass (common RBs) account for what the dedicated pass
already covers.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence

from hybridslice.traffic import UeQueue, max_delay_ttis

PF_WINDOW = 100
PF_FLOOR = 1.0


@dataclass
class RbGrant:
    ue_id: int
    rbs_dedicated: int = 0
    rbs_common: int = 0

    @property
    def total(self) -> int:
        return self.rbs_dedicated + self.rbs_common


@dataclass
class PfState:
    ue_id: int
    avg_rate: float = PF_FLOOR

    def update(self, served_bits: float, window: int = PF_WINDOW) -> None:
        self.avg_rate = max(PF_FLOOR, (1.0 - 1.0 / window) * self.avg_rate + served_bits / window)


def rbs_for_bits(bits: float, per_rb_rate: float) -> int:
    """RBs needed to carry ``bits`` at ``per_rb_rate``; 0 if the link carries nothing."""
    if bits <= 0 or per_rb_rate <= 0:
        return 0
    # guard against 1000.0000000001 / 100 style rounding up
    return max(1, math.ceil(bits / per_rb_rate - 1e-9))


def pf_schedule(
    ues: Sequence[int],
    rbs: int,
    per_rb_rate: Mapping[int, float],
    pf: Mapping[int, PfState],
    demand_bits: Mapping[int, float],
    credit_bits: Optional[Mapping[int, float]] = None,
    window: int = PF_WINDOW,
) -> Dict[int, int]:
    """Proportional-fair grant of ``rbs`` RBs, one RB at a time.

    Each RB goes to the eligible UE with the largest
    ``per_rb_rate / projected_avg`` where ``projected_avg`` is the EMA the
    UE would have after receiving the bits granted so far this TTI. A UE
    stops being eligible once its grants cover its queued bits.
    """
    credit_bits = credit_bits or {}
    grants: Dict[int, int] = {}
    heap = []
    for ue in ues:
        r = per_rb_rate[ue]
        if r <= 0 or demand_bits.get(ue, 0.0) - credit_bits.get(ue, 0.0) <= 0:
            continue
        base = (1.0 - 1.0 / window) * pf[ue].avg_rate
        granted = credit_bits.get(ue, 0.0)
        heap.append((-r / (base + granted / window), ue, base, granted))
    heapq.heapify(heap)
    left = rbs
    while left > 0 and heap:
        _, ue, base, granted = heapq.heappop(heap)
        r = per_rb_rate[ue]
        grants[ue] = grants.get(ue, 0) + 1
        left -= 1
        granted += r
        if granted < demand_bits[ue]:
            heapq.heappush(heap, (-r / (base + granted / window), ue, base, granted))
    return grants


def edf_schedule(
    queues: Sequence[UeQueue],
    rbs: int,
    per_rb_rate: Mapping[int, float],
    tti: int,
    d_max: float,
    dt: float = 1e-3,
    credit_bits: Optional[Mapping[int, float]] = None,
) -> Dict[int, int]:
    """Earliest-deadline-first grant of ``rbs`` RBs.

    Packets across the slice are visited in (deadline, ue_id, FCFS position)
    order; each UE gets the fewest RBs that finish the visited packet this
    TTI, capped by what is left. Ties on deadline go to the lower ue_id.
    """
    credit_bits = dict(credit_bits or {})
    limit = max_delay_ttis(d_max, dt)
    order = []
    for q in queues:
        if per_rb_rate[q.ue_id] <= 0:
            continue
        for pos, p in enumerate(q.packets):
            order.append((p.arrival_tti + limit - 1, q.ue_id, pos, p.remaining))
    order.sort()
    grants: Dict[int, int] = {}
    covered = {ue: credit_bits.get(ue, 0.0) for ue in {o[1] for o in order}}
    # bits of each UE's queue up to and including the visited packet
    cumulative: Dict[int, float] = {}
    left = rbs
    for _, ue, _, remaining in order:
        if left <= 0:
            break
        cumulative[ue] = cumulative.get(ue, 0.0) + remaining
        need = rbs_for_bits(cumulative[ue] - covered[ue], per_rb_rate[ue])
        if need == 0:
            continue
        give = min(need, left)
        grants[ue] = grants.get(ue, 0) + give
        covered[ue] += give * per_rb_rate[ue]
        left -= give
    return grants


def share_common(common_rbs: int, demands: Sequence[int], order: Optional[Sequence[int]] = None) -> list:
    """Split the common pool greedily by slice priority.

    Args:
        common_rbs: size of the common pool this TTI.
        demands: residual RB demand per slice (slice index order).
        order: slice indices from highest to lowest priority; defaults to
            index order.

    Returns:
        Per-slice common RB counts, in slice index order.
    """
    if common_rbs < 0 or any(d < 0 for d in demands):
        raise ValueError("common_rbs and demands must be nonnegative")
    out = [0] * len(demands)
    left = common_rbs
    for m in order if order is not None else range(len(demands)):
        take = min(demands[m], left)
        out[m] = take
        left -= take
    return out


def residual_demand(
    ues: Sequence[int],
    queued_bits: Mapping[int, float],
    per_rb_rate: Mapping[int, float],
    grants: Mapping[int, int],
) -> int:
    """RBs a slice still needs this TTI to drain every queue, beyond ``grants``."""
    total = 0
    for ue in ues:
        left = queued_bits[ue] - grants.get(ue, 0) * per_rb_rate[ue]
        total += rbs_for_bits(left, per_rb_rate[ue])
    return total
