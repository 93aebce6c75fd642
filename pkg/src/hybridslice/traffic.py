"""Packet arrivals, per-UE FCFS queues, service and deadline expiry."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterator, List, Optional

import numpy as np

TRAFFIC_KINDS = ("poisson", "periodic")


@dataclass
class Packet:
    id: int
    ue_id: int
    size: float
    arrival_tti: int
    remaining: float = -1.0
    delivered_tti: Optional[int] = None

    def __post_init__(self):
        if self.remaining < 0:
            self.remaining = self.size

    def delay_ttis(self, tti: int) -> int:
        """Delay in TTIs if the packet completes at ``tti`` (the completing TTI counts)."""
        return tti - self.arrival_tti + 1


@dataclass(frozen=True)
class TrafficModel:
    kind: str
    rate: float  # packets/s
    packet_size: float  # bits

    def __post_init__(self):
        if self.kind not in TRAFFIC_KINDS:
            raise ValueError(f"traffic kind must be one of {TRAFFIC_KINDS}, got {self.kind!r}")
        if self.rate <= 0:
            raise ValueError(f"traffic rate must be > 0, got {self.rate}")
        if self.packet_size <= 0:
            raise ValueError(f"packet_size must be > 0, got {self.packet_size}")

    def period_ttis(self, dt: float) -> int:
        return max(1, int(round(1.0 / (self.rate * dt))))


def max_delay_ttis(d_max: float, dt: float) -> int:
    """Largest delay (in TTIs) still within ``d_max``."""
    return int(math.floor(d_max / dt + 1e-9))


@dataclass
class UeQueue:
    ue_id: int
    packets: deque = field(default_factory=deque)
    arrived_count: int = 0
    delivered_count: int = 0
    dropped_count: int = 0
    served_bits: float = 0.0

    def push(self, packets) -> None:
        for p in packets:
            self.packets.append(p)
            self.arrived_count += 1

    @property
    def queued_bits(self) -> float:
        return sum(p.remaining for p in self.packets)

    def __len__(self) -> int:
        return len(self.packets)

    def new_epoch(self) -> None:
        self.arrived_count = 0
        self.delivered_count = 0
        self.dropped_count = 0
        self.served_bits = 0.0


def generate_arrivals(
    model: TrafficModel,
    tti: int,
    rng: np.random.Generator,
    *,
    ue_id: int = 0,
    dt: float = 1e-3,
    phase: int = 0,
    ids: Optional[Iterator[int]] = None,
) -> List[Packet]:
    """Packets arriving for one UE in TTI ``tti``.

    Poisson traffic draws ``Poisson(rate * dt)`` packets; periodic traffic
    emits one packet every ``round(1 / (rate * dt))`` TTIs starting at
    ``phase``. The periodic branch never touches ``rng``.
    """
    if model.kind == "poisson":
        count = int(rng.poisson(model.rate * dt))
    else:
        count = 1 if (tti - phase) % model.period_ttis(dt) == 0 else 0
    if ids is None:
        ids = iter(range(count))
    return [Packet(next(ids), ue_id, model.packet_size, tti) for _ in range(count)]


def serve(queue: UeQueue, budget: float, tti: int, log: Optional[list] = None) -> List[Packet]:
    """Drain up to ``budget`` bits from the head of the queue.

    Partially served packets keep their ``remaining`` bits for later TTIs.
    If ``log`` is given, one ``(tti, ue_id, packet_id, bits)`` tuple is
    appended per packet touched.
    """
    delivered = []
    packets = queue.packets
    while budget > 0 and packets:
        head = packets[0]
        bits = min(budget, head.remaining)
        head.remaining -= bits
        budget -= bits
        queue.served_bits += bits
        if log is not None:
            log.append((tti, queue.ue_id, head.id, bits))
        if head.remaining <= 0:
            head.remaining = 0.0
            head.delivered_tti = tti
            packets.popleft()
            queue.delivered_count += 1
            delivered.append(head)
    return delivered


def expire(queue: UeQueue, tti: int, d_max: float, dt: float = 1e-3) -> List[Packet]:
    """Drop every queued packet whose delay at ``tti`` would exceed ``d_max``."""
    limit = max_delay_ttis(d_max, dt)
    packets = queue.packets
    if not packets or packets[0].delay_ttis(tti) <= limit:
        # FCFS order: head is the oldest packet
        return []
    dropped = []
    kept = deque()
    for p in packets:
        if p.delay_ttis(tti) > limit:
            dropped.append(p)
        else:
            kept.append(p)
    queue.packets = kept
    queue.dropped_count += len(dropped)
    return dropped
