import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridslice.traffic import (
    Packet,
    TrafficModel,
    UeQueue,
    expire,
    generate_arrivals,
    max_delay_ttis,
    serve,
)


def queue_of(*sizes, arrivals=None):
    q = UeQueue(0)
    arrivals = arrivals or [0] * len(sizes)
    q.push(Packet(i, 0, s, a) for i, (s, a) in enumerate(zip(sizes, arrivals)))
    return q


def test_periodic_every_tenth_tti():
    m = TrafficModel("periodic", 100.0, 256)
    rng = np.random.default_rng(0)
    hits = [t for t in range(100) if generate_arrivals(m, t, rng)]
    assert hits == list(range(0, 100, 10))
    assert generate_arrivals(m, 20, rng)[0].size == 256


def test_periodic_phase():
    m = TrafficModel("periodic", 100.0, 256)
    hits = [t for t in range(30) if generate_arrivals(m, t, None, phase=3)]
    assert hits == [3, 13, 23]


def test_poisson_mean_over_1e6_ttis():
    m = TrafficModel("poisson", 100.0, 55000)
    rng = np.random.default_rng(7)
    n = 1_000_000
    # same draws the per-TTI generator makes, vectorized for speed
    counts = rng.poisson(m.rate * 1e-3, size=n)
    assert counts.mean() == pytest.approx(0.1, rel=0.01)
    rng2 = np.random.default_rng(7)
    sample = [len(generate_arrivals(m, t, rng2)) for t in range(2000)]
    assert sample == counts[:2000].tolist()


def test_arrivals_deterministic_given_seed():
    m = TrafficModel("poisson", 300.0, 100)
    r1, r2 = np.random.default_rng(11), np.random.default_rng(11)
    s1 = [(p.arrival_tti, p.size) for t in range(500) for p in generate_arrivals(m, t, r1)]
    s2 = [(p.arrival_tti, p.size) for t in range(500) for p in generate_arrivals(m, t, r2)]
    assert s1 == s2 and s1


def test_packet_ids_from_counter():
    ids = itertools.count(100)
    m = TrafficModel("periodic", 1000.0, 8)
    pk = generate_arrivals(m, 0, None, ue_id=4, ids=ids) + generate_arrivals(m, 1, None, ue_id=4, ids=ids)
    assert [p.id for p in pk] == [100, 101]
    assert all(p.ue_id == 4 for p in pk)


def test_traffic_validation():
    with pytest.raises(ValueError):
        TrafficModel("bursty", 1.0, 1.0)
    with pytest.raises(ValueError):
        TrafficModel("poisson", 0.0, 1.0)


def test_serve_zero_budget():
    q = queue_of(500, 1000)
    assert serve(q, 0, 3) == []
    assert [p.remaining for p in q.packets] == [500, 1000]


def test_serve_partial_hand_trace():
    q = queue_of(800, 1000)
    q.packets[0].remaining = 500
    done = serve(q, 1200, 4)
    assert [p.id for p in done] == [0]
    assert done[0].delivered_tti == 4
    assert len(q) == 1 and q.packets[0].remaining == 300


def test_serve_saturation_empties_queue():
    q = queue_of(10, 20, 30)
    log = []
    done = serve(q, 1e6, 0, log)
    assert len(done) == 3 and len(q) == 0
    assert [b for *_, b in log] == [10, 20, 30]
    assert q.served_bits == 60


def test_expire_empty():
    assert expire(UeQueue(0), 10, 0.005) == []


def test_expire_deadline_rule():
    limit = max_delay_ttis(0.005, 1e-3)
    assert limit == 5
    for tti in range(5):
        q = queue_of(100)
        assert expire(q, tti, 0.005) == []
    q = queue_of(100)
    dropped = expire(q, 5, 0.005)
    assert len(dropped) == 1 and q.dropped_count == 1


def test_delivered_at_deadline_not_dropped():
    q = queue_of(100)
    # delay counts the serving TTI: arrival 0, served at TTI 4 -> 5 TTIs = d_max
    assert expire(q, 4, 0.005) == []
    done = serve(q, 100, 4)
    assert done[0].delay_ttis(4) == 5
    assert q.delivered_count == 1 and q.dropped_count == 0


def test_expire_keeps_fresh_packets():
    q = queue_of(1, 1, 1, arrivals=[0, 3, 6])
    dropped = expire(q, 8, 0.005)
    assert [p.arrival_tti for p in dropped] == [0, 3]
    assert [p.arrival_tti for p in q.packets] == [6]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.floats(50.0, 2000.0), st.floats(10.0, 3000.0), st.booleans())
def test_queue_conservation_fcfs_disjoint(seed, rate, budget, with_deadline):
    """arrived = delivered + dropped + queued; FCFS delivery; no packet both delivered and dropped."""
    rng = np.random.default_rng(seed)
    m = TrafficModel("poisson", rate, 500.0)
    q = UeQueue(0)
    ids = itertools.count()
    delivered, dropped = [], []
    for t in range(300):
        q.push(generate_arrivals(m, t, rng, ids=ids))
        if with_deadline:
            dropped += expire(q, t, 0.005)
        delivered += serve(q, float(rng.uniform(0, budget)), t)
    assert q.arrived_count == len(delivered) + len(dropped) + len(q)
    assert q.delivered_count == len(delivered) and q.dropped_count == len(dropped)
    arr = [p.arrival_tti for p in delivered]
    assert arr == sorted(arr)
    assert not {p.id for p in delivered} & {p.id for p in dropped}
    if with_deadline:
        assert all(p.delay_ttis(p.delivered_tti) <= 5 for p in delivered)
