from __future__ import annotations

import collections
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from ffsim.net import (ACK_SIZE, InvalidArity, Packet, Port, SharedPool, Unreachable, base_rtt, build_fat_tree,
                       build_rail_optimized, build_two_tier, dequeue, enqueue, gbps, load_topology, mark_ecn,
                       pause_ports, route, save_topology, unpause_ports)
from ffsim.runner import RunConfig, run


def pkt(size=1000):
    return Packet(None, 0, size, (), 0, None)


def port(cap=100_000, pool=None, ecn_k=None):
    return Port(0, 0, 1, gbps(10), 1000, cap, ecn_k, pool)


@pytest.mark.parametrize("k", [2, 4, 6, 8])
def test_fat_tree_closed_form_counts(k):
    t = build_fat_tree(k)
    assert len(t.hosts) == k ** 3 // 4
    assert len(t.switches) == 5 * k * k // 4
    assert t.is_connected()


def test_fat_tree_rejects_odd_arity():
    with pytest.raises(InvalidArity):
        build_fat_tree(3)


def test_two_tier_structure():
    t = build_two_tier(4, 4, 2)
    assert len(t.hosts) == 16 and len(t.switches) == 6
    hosts = t.hosts
    assert all(len(route(t, hosts[0], h)) > 0 for h in hosts[1:])


def test_rail_structure():
    t = build_rail_optimized(4, 2, 2)
    assert len(t.hosts) == 8 and len(t.switches) == 4 and t.is_connected()


def test_route_unique_path_and_determinism():
    t = build_two_tier(1, 2, 1)
    a, b = t.hosts
    r1 = route(t, a, b, sport=7)
    r2 = route(t, a, b, sport=7)
    assert r1.ids == r2.ids and len(r1) == 2


def test_route_rejects_self():
    t = build_fat_tree(4)
    with pytest.raises(Unreachable):
        route(t, t.hosts[0], t.hosts[0])


def test_ecmp_balance_over_two_paths():
    t = build_two_tier(2, 1, 2)
    a, b = t.hosts
    spine_of = collections.Counter(route(t, a, b, sport=s).nodes[2] for s in range(1000))
    assert len(spine_of) == 2
    assert all(300 <= n <= 700 for n in spine_of.values())


def test_fat_tree_route_lengths():
    t = build_fat_tree(4)
    h = t.hosts
    assert len(route(t, h[0], h[1])) == 2      # same edge switch
    assert len(route(t, h[0], h[2])) == 4      # same pod
    assert len(route(t, h[0], h[15])) == 6     # across the core


def test_base_rtt_closed_form():
    t = build_fat_tree(4)
    r = route(t, t.hosts[0], t.hosts[15])
    ser = lambda size: -(-Fraction(size) // gbps(10))   # ceiling, ns
    expected = 6 * (ser(1000) + 1000) + 6 * (ser(ACK_SIZE) + 1000)
    assert base_rtt(r) == expected


def test_enqueue_into_empty_port():
    p = port()
    assert enqueue(p, pkt()) and p.q == 1000


def test_tail_drop_at_cap():
    p = port(cap=2000)
    assert enqueue(p, pkt()) and enqueue(p, pkt())
    assert not enqueue(p, pkt()) and p.drops == 1 and p.q == 2000


def test_shared_pool_exhausted_by_other_port():
    pool = SharedPool(3000)
    a, b = port(pool=pool), port(pool=pool)
    for _ in range(3):
        assert enqueue(a, pkt())
    assert b.q + 1000 <= b.cap
    assert not enqueue(b, pkt())


def test_shared_pool_drops_in_packet_simulation():
    flows = [{"id": f"f{i}", "src": i, "dst": 3, "size": 300_000} for i in range(3)]
    base = dict(workload={"kind": "flows", "flows": flows}, cca={"variant": "DctcpLike"}, mode="baseline")
    tight = run(RunConfig(topology={"kind": "two_tier", "tors": 1, "hosts_per_tor": 4, "spines": 1,
                                    "shared_buffer": 20_000}, **base))
    roomy = run(RunConfig(topology={"kind": "two_tier", "tors": 1, "hosts_per_tor": 4, "spines": 1}, **base))
    assert roomy.counters["drops"] == 0
    assert tight.counters["drops"] > 0
    assert len(tight.flows) == 3


@pytest.mark.parametrize("q, k, marked", [(0, 64_000, False), (65_000, 64_000, True), (0, 0, True)])
def test_ecn_threshold(q, k, marked):
    p = port(ecn_k=k)
    p.q = q
    x = pkt()
    mark_ecn(p, x)
    assert x.ecn is marked


def test_pause_and_unpause():
    ps = [port(), port()]
    assert pause_ports(ps, 500) == 2
    assert all(p.paused and p.resume_at == 500 for p in ps)
    unpause_ports(ps)
    assert not any(p.paused for p in ps)


def test_frozen_port_still_occupies_shared_pool():
    pool = SharedPool(20_000)
    frozen, other = port(pool=pool), port(pool=pool)
    for _ in range(14):
        enqueue(frozen, pkt())
    pause_ports([frozen], 10**9)
    admitted = 0
    while enqueue(other, pkt()):
        admitted += 1
    assert admitted == 6 and pool.used == 20_000 and frozen.q == 14_000


def test_topology_file_round_trip(tmp_path):
    t = build_fat_tree(4, ecn_k=30_000)
    path = tmp_path / "topo.json"
    save_topology(t, path)
    u = load_topology(path)
    assert [n.name for n in u.nodes] == [n.name for n in t.nodes]
    assert (u.ecn_k, len(u.ports)) == (30_000, len(t.ports))
    h = t.hosts
    assert route(u, h[0], h[15], sport=3).ids == route(t, h[0], h[15], sport=3).ids


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2), st.booleans(), st.integers(64, 1500)), max_size=200))
def test_buffer_conservation(ops):
    pool = SharedPool(50_000)
    ports = [Port(i, 0, 1, gbps(10), 1000, 20_000, None, pool) for i in range(3)]
    for i, push, size in ops:
        p = ports[i]
        if push:
            enqueue(p, pkt(size))
        elif p.queue:
            dequeue(p)
        assert sum(x.q for x in ports) == pool.used
        assert all(x.q == sum(y.size for y in x.queue) for x in ports)
