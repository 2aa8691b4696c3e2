"""Topology, ports, packets, ECMP routing and shared-buffer accounting.

Links are full duplex; each direction is an egress :class:`Port` owned by the
transmitting node.  Switch ports draw from a per-switch :class:`SharedPool` in
addition to their own static cap.
"""
from __future__ import annotations

import hashlib
import json
import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

HOST = "host"
SWITCH = "switch"

DEFAULT_MTU = 1000
ACK_SIZE = 64


class TopologyError(Exception):
    pass


class InvalidArity(TopologyError):
    pass


class Unreachable(TopologyError):
    pass


def gbps(x: float | int | str) -> Fraction:
    """Bandwidth in Gbit/s as an exact bytes-per-nanosecond rational."""
    return Fraction(x) / 8


@dataclass
class Node:
    id: int
    name: str
    kind: str
    rail: int | None = None
    pod: int | None = None


class SharedPool:
    __slots__ = ("capacity", "used")

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.used = 0


class Port:
    __slots__ = (
        "id", "node", "peer", "bw", "bw_f", "delay", "cap", "ecn_k", "pool",
        "queue", "q", "busy_until", "offset", "tx_bytes", "drops", "pending",
        "paused", "resume_at", "_ser",
    )

    def __init__(self, pid: int, node: int, peer: int, bw: Fraction, delay: int, cap: int,
                 ecn_k: int | None, pool: SharedPool | None):
        self.id = pid
        self.node = node
        self.peer = peer
        self.bw = bw
        self.bw_f = float(bw)
        self.delay = delay
        self.cap = cap
        self.ecn_k = ecn_k
        self.pool = pool
        self.queue: deque = deque()
        self.q = 0
        # busy_until is in port-local time (global time minus offset)
        self.busy_until = 0
        self.offset = 0
        self.tx_bytes = 0
        self.drops = 0
        self.pending = False
        self.paused = False
        self.resume_at = 0
        self._ser: dict[int, int] = {}

    def ser(self, size: int) -> int:
        """Serialization time in whole nanoseconds (ceiling)."""
        t = self._ser.get(size)
        if t is None:
            t = self._ser[size] = math.ceil(Fraction(size) / self.bw)
        return t

    def admits(self, size: int) -> bool:
        if self.q + size > self.cap:
            return False
        pool = self.pool
        return pool is None or pool.used + size <= pool.capacity

    def __repr__(self) -> str:
        return f"Port({self.id}: {self.node}->{self.peer}, q={self.q})"


class Packet:
    __slots__ = ("flow", "seq", "size", "ecn", "is_ack", "hop", "route", "sent", "tel", "ack")

    def __init__(self, flow, seq: int, size: int, route: Sequence[Port], sent: int, tel: list | None):
        self.flow = flow
        self.seq = seq
        self.size = size
        self.ecn = False
        self.is_ack = False
        self.hop = 0
        self.route = route
        self.sent = sent
        self.tel = tel
        self.ack = 0


def enqueue(port: Port, pkt: Packet) -> bool:
    """Admission control + ECN marking.  Returns False on tail drop.

    Does not start transmission; the simulator owns the departure schedule.
    """
    size = pkt.size
    if not port.admits(size):
        port.drops += 1
        return False
    mark_ecn(port, pkt)
    port.queue.append(pkt)
    port.q += size
    if port.pool is not None:
        port.pool.used += size
    return True


def dequeue(port: Port) -> Packet:
    pkt = port.queue.popleft()
    port.q -= pkt.size
    if port.pool is not None:
        port.pool.used -= pkt.size
    return pkt


def mark_ecn(port: Port, pkt: Packet) -> None:
    k = port.ecn_k
    if k is not None and port.q >= k and (port.q > k or k == 0):
        pkt.ecn = True


def pause_ports(ports: Iterable[Port], resume_at: int) -> int:
    n = 0
    for p in ports:
        p.paused = True
        p.resume_at = resume_at
        n += 1
    return n


def unpause_ports(ports: Iterable[Port]) -> None:
    for p in ports:
        p.paused = False


@dataclass
class Route:
    ports: tuple[Port, ...]

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(p.id for p in self.ports)

    @property
    def nodes(self) -> tuple[int, ...]:
        if not self.ports:
            return ()
        return (self.ports[0].node,) + tuple(p.peer for p in self.ports)

    def __len__(self) -> int:
        return len(self.ports)


@dataclass
class Topology:
    nodes: list[Node] = field(default_factory=list)
    ports: list[Port] = field(default_factory=list)
    links: list[tuple[int, int, Fraction, int]] = field(default_factory=list)
    pools: dict[int, SharedPool] = field(default_factory=dict)
    port_cap: int = 1_000_000
    shared_buffer: int = 4_000_000
    host_cap: int = 64_000_000
    ecn_k: int | None = None
    name: str = "custom"
    _out: dict[int, list[Port]] = field(default_factory=dict, repr=False)
    _dist: dict[int, dict[int, int]] = field(default_factory=dict, repr=False)

    # -- construction --------------------------------------------------------
    def add_node(self, name: str, kind: str, **kw) -> int:
        nid = len(self.nodes)
        self.nodes.append(Node(nid, name, kind, **kw))
        self._out[nid] = []
        if kind == SWITCH:
            self.pools[nid] = SharedPool(self.shared_buffer)
        return nid

    def _port(self, a: int, b: int, bw: Fraction, delay: int) -> Port:
        is_host = self.nodes[a].kind == HOST
        port = Port(
            len(self.ports), a, b, bw, delay,
            cap=self.host_cap if is_host else self.port_cap,
            ecn_k=None if is_host else self.ecn_k,
            pool=None if is_host else self.pools[a],
        )
        self.ports.append(port)
        self._out[a].append(port)
        return port

    def add_link(self, a: int, b: int, bw: Fraction, delay: int) -> None:
        if bw <= 0:
            raise TopologyError("link bandwidth must be positive")
        if delay < 0:
            raise TopologyError("link delay must be non-negative")
        self.links.append((a, b, Fraction(bw), int(delay)))
        self._port(a, b, Fraction(bw), int(delay))
        self._port(b, a, Fraction(bw), int(delay))
        self._dist.clear()

    # -- queries -----------------------------------------------------------------
    @property
    def hosts(self) -> list[int]:
        return [n.id for n in self.nodes if n.kind == HOST]

    @property
    def switches(self) -> list[int]:
        return [n.id for n in self.nodes if n.kind == SWITCH]

    def out_ports(self, node: int) -> list[Port]:
        return self._out[node]

    def port_between(self, a: int, b: int) -> Port:
        for p in self._out[a]:
            if p.peer == b:
                return p
        raise TopologyError(f"no link {a}->{b}")

    def _distances(self, dst: int) -> dict[int, int]:
        d = self._dist.get(dst)
        if d is not None:
            return d
        # BFS on reversed edges; hosts relay nothing except as endpoints
        d = {dst: 0}
        frontier = [dst]
        while frontier:
            nxt = []
            for v in frontier:
                for p in self._out[v]:
                    u = p.peer  # link is bidirectional: u -> v exists
                    if u in d:
                        continue
                    if self.nodes[v].kind == HOST and v != dst:
                        continue
                    d[u] = d[v] + 1
                    nxt.append(u)
            frontier = nxt
        self._dist[dst] = d
        return d

    def is_connected(self) -> bool:
        if not self.nodes:
            return True
        seen = {0}
        stack = [0]
        while stack:
            v = stack.pop()
            for p in self._out[v]:
                if p.peer not in seen:
                    seen.add(p.peer)
                    stack.append(p.peer)
        return len(seen) == len(self.nodes)

    def validate(self) -> None:
        if not self.is_connected():
            raise TopologyError("topology is not connected")

    def pool_occupancy(self, switch: int) -> int:
        return self.pools[switch].used

    def queued_on(self, switch: int) -> int:
        return sum(p.q for p in self._out[switch])


# -- ECMP ------------------------------------------------------------------------

def _ecmp_index(key: tuple, node: int, n: int, salt: int) -> int:
    h = hashlib.blake2b(repr((key, node, salt)).encode(), digest_size=8).digest()
    return int.from_bytes(h, "little") % n


def route(topo: Topology, src: int, dst: int, sport: int = 0, dport: int = 0, proto: int = 17,
          salt: int = 0) -> Route:
    """Deterministic hash-based ECMP shortest path for a flow 5-tuple."""
    if src == dst:
        raise Unreachable("source equals destination")
    for n in (src, dst):
        if n < 0 or n >= len(topo.nodes) or topo.nodes[n].kind != HOST:
            raise Unreachable(f"{n} is not a host")
    dist = topo._distances(dst)
    if src not in dist:
        raise Unreachable(f"{dst} unreachable from {src}")
    key = (src, dst, sport, dport, proto)
    ports: list[Port] = []
    node = src
    while node != dst:
        here = dist[node]
        cands = [p for p in topo.out_ports(node)
                 if dist.get(p.peer, -1) == here - 1
                 and (p.peer == dst or topo.nodes[p.peer].kind == SWITCH)]
        if not cands:
            raise Unreachable(f"dead end at node {node}")
        p = cands[_ecmp_index(key, node, len(cands), salt)] if len(cands) > 1 else cands[0]
        ports.append(p)
        node = p.peer
    return Route(tuple(ports))


def base_rtt(r: Route, mtu: int = DEFAULT_MTU, ack_size: int = ACK_SIZE) -> int:
    """Unloaded round trip: data serialization + propagation out, ACK back."""
    fwd = sum(p.ser(mtu) + p.delay for p in r.ports)
    return fwd + ack_delay(r, ack_size)


def ack_delay(r: Route, ack_size: int = ACK_SIZE) -> int:
    return sum(p.ser(ack_size) + p.delay for p in r.ports)


# -- builders ----------------------------------------------------------------------

def _new(name: str, port_cap: int, shared_buffer: int, ecn_k: int | None) -> Topology:
    return Topology(name=name, port_cap=port_cap, shared_buffer=shared_buffer, ecn_k=ecn_k)


def build_fat_tree(k: int, bw: Fraction = gbps(10), delay: int = 1000, *, port_cap: int = 1_000_000,
                   shared_buffer: int = 4_000_000, ecn_k: int | None = None) -> Topology:
    """Standard three-level k-ary fat-tree: k^3/4 hosts, 5k^2/4 switches."""
    if k < 2 or k % 2:
        raise InvalidArity(f"fat-tree arity must be even and >= 2, got {k}")
    topo = _new(f"fat_tree_k{k}", port_cap, shared_buffer, ecn_k)
    half = k // 2
    hosts = []
    for pod in range(k):
        for e in range(half):
            for h in range(half):
                hosts.append(topo.add_node(f"h{pod}_{e}_{h}", HOST, pod=pod))
    edges = [[topo.add_node(f"e{pod}_{e}", SWITCH, pod=pod) for e in range(half)] for pod in range(k)]
    aggs = [[topo.add_node(f"a{pod}_{a}", SWITCH, pod=pod) for a in range(half)] for pod in range(k)]
    cores = [topo.add_node(f"c{c}", SWITCH) for c in range(half * half)]
    i = 0
    for pod in range(k):
        for e in range(half):
            for _ in range(half):
                topo.add_link(hosts[i], edges[pod][e], bw, delay)
                i += 1
        for e in range(half):
            for a in range(half):
                topo.add_link(edges[pod][e], aggs[pod][a], bw, delay)
        for a in range(half):
            for c in range(half):
                topo.add_link(aggs[pod][a], cores[a * half + c], bw, delay)
    return topo


def build_two_tier(n_tor: int, hosts_per_tor: int, n_spine: int, bw: Fraction = gbps(10),
                   delay: int = 1000, *, uplink_bw: Fraction | None = None, port_cap: int = 1_000_000,
                   shared_buffer: int = 4_000_000, ecn_k: int | None = None) -> Topology:
    """Leaf-spine: every ToR connects to every spine."""
    if n_tor < 1 or hosts_per_tor < 1 or n_spine < 1:
        raise InvalidArity("two-tier arities must be positive")
    topo = _new(f"two_tier_{n_tor}x{hosts_per_tor}_{n_spine}", port_cap, shared_buffer, ecn_k)
    hosts = [[topo.add_node(f"h{t}_{h}", HOST, pod=t) for h in range(hosts_per_tor)] for t in range(n_tor)]
    tors = [topo.add_node(f"tor{t}", SWITCH, pod=t) for t in range(n_tor)]
    spines = [topo.add_node(f"spine{s}", SWITCH) for s in range(n_spine)]
    for t in range(n_tor):
        for h in hosts[t]:
            topo.add_link(h, tors[t], bw, delay)
        for s in spines:
            topo.add_link(tors[t], s, uplink_bw or bw, delay)
    return topo


def build_rail_optimized(n_servers: int, rails: int, n_spine: int, bw: Fraction = gbps(10),
                         delay: int = 1000, *, port_cap: int = 1_000_000, shared_buffer: int = 4_000_000,
                         ecn_k: int | None = None) -> Topology:
    """Rail-optimized leaf-spine: NIC ``i`` of every server attaches to rail switch ``i``.

    Every GPU is its own host; intra-server links are not modelled.
    """
    if n_servers < 1 or rails < 1 or n_spine < 1:
        raise InvalidArity("rail-optimized arities must be positive")
    topo = _new(f"rail_{n_servers}x{rails}_{n_spine}", port_cap, shared_buffer, ecn_k)
    gpus = [[topo.add_node(f"s{s}_g{r}", HOST, rail=r, pod=s) for r in range(rails)] for s in range(n_servers)]
    rail_sw = [topo.add_node(f"rail{r}", SWITCH, rail=r) for r in range(rails)]
    spines = [topo.add_node(f"spine{s}", SWITCH) for s in range(n_spine)]
    for s in range(n_servers):
        for r in range(rails):
            topo.add_link(gpus[s][r], rail_sw[r], bw, delay)
    for r in rail_sw:
        for s in spines:
            topo.add_link(r, s, bw, delay)
    return topo


# -- file format -----------------------------------------------------------------------

def topology_to_dict(topo: Topology) -> dict:
    return {
        "name": topo.name,
        "buffer": {"port_cap": topo.port_cap, "shared": topo.shared_buffer,
                   "host_cap": topo.host_cap, "ecn_k": topo.ecn_k},
        "nodes": [{"name": n.name, "kind": n.kind, **({"pod": n.pod} if n.pod is not None else {}),
                   **({"rail": n.rail} if n.rail is not None else {})} for n in topo.nodes],
        "links": [{"a": topo.nodes[a].name, "b": topo.nodes[b].name,
                   "gbps": str(bw * 8), "delay_ns": d} for a, b, bw, d in topo.links],
    }


def topology_from_dict(doc: dict) -> Topology:
    buf = doc.get("buffer", {})
    topo = Topology(name=doc.get("name", "custom"), port_cap=int(buf.get("port_cap", 1_000_000)),
                    shared_buffer=int(buf.get("shared", 4_000_000)),
                    host_cap=int(buf.get("host_cap", 64_000_000)),
                    ecn_k=None if buf.get("ecn_k") is None else int(buf["ecn_k"]))
    names: dict[str, int] = {}
    for n in doc["nodes"]:
        if n["kind"] not in (HOST, SWITCH):
            raise TopologyError(f"node {n['name']!r}: kind must be host or switch")
        names[n["name"]] = topo.add_node(n["name"], n["kind"], pod=n.get("pod"), rail=n.get("rail"))
    for ln in doc["links"]:
        try:
            a, b = names[ln["a"]], names[ln["b"]]
        except KeyError as e:
            raise TopologyError(f"link references unknown node {e.args[0]!r}") from None
        topo.add_link(a, b, gbps(ln["gbps"]), int(ln.get("delay_ns", 0)))
    topo.validate()
    return topo


def save_topology(topo: Topology, path: str | Path) -> None:
    Path(path).write_text(json.dumps(topology_to_dict(topo), indent=1))


def load_topology(path: str | Path) -> Topology:
    return topology_from_dict(json.loads(Path(path).read_text()))
