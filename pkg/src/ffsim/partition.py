"""Port-level network partitioning.

A partition is a connected component of the bipartite graph whose two vertex
classes are flows and the egress ports they traverse.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum
from typing import Hashable, Iterable, Mapping, Sequence


class PartitionState(str, Enum):
    Unsteady = "Unsteady"
    Steady = "Steady"


class UnknownFlow(KeyError):
    pass


@dataclass
class Partition:
    id: int
    flows: list[Hashable]
    ports: set[int]
    state: PartitionState = PartitionState.Unsteady
    meta: dict = field(default_factory=dict)

    def flow_set(self) -> frozenset:
        return frozenset(self.flows)


@dataclass
class ConflictBipartite:
    """Flow vertices ``0..n-1`` followed by port vertices ``n..n+m-1``."""
    flows: list[Hashable]
    ports: list[int]
    adj: list[list[int]]

    @classmethod
    def build(cls, routes: Mapping[Hashable, Sequence[int]]) -> "ConflictBipartite":
        flows = list(routes)
        port_idx: dict[int, int] = {}
        ports: list[int] = []
        adj: list[list[int]] = [[] for _ in flows]
        n = len(flows)
        for i, f in enumerate(flows):
            for p in routes[f]:
                j = port_idx.get(p)
                if j is None:
                    j = port_idx[p] = n + len(ports)
                    ports.append(p)
                    adj.append([])
                adj[i].append(j)
                adj[j].append(i)
        return cls(flows, ports, adj)


def components(routes: Mapping[Hashable, Sequence[int]]) -> list[tuple[list[Hashable], set[int]]]:
    """Connected components by iterative DFS; linear in flows plus edges."""
    g = ConflictBipartite.build(routes)
    n = len(g.flows)
    seen = bytearray(len(g.adj))
    out = []
    for s in range(n):
        if seen[s]:
            continue
        seen[s] = 1
        stack = [s]
        fl: list[int] = []
        pt: set[int] = set()
        while stack:
            v = stack.pop()
            if v < n:
                fl.append(v)
            else:
                pt.add(g.ports[v - n])
            for w in g.adj[v]:
                if not seen[w]:
                    seen[w] = 1
                    stack.append(w)
        fl.sort()
        out.append(([g.flows[i] for i in fl], pt))
    return out


_ids = itertools.count(1)


def partition_full(routes: Mapping[Hashable, Sequence[int]], ids: Iterable[int] | None = None) -> list[Partition]:
    """Partition all active flows from scratch.  Output follows flow insertion order."""
    it = iter(ids) if ids is not None else _ids
    return [Partition(next(it), fl, pt) for fl, pt in components(routes)]


@dataclass
class Change:
    removed: list[Partition]
    created: list[Partition]


class IncrementalPartitioner:
    """Maintains partitions under flow arrival and departure.

    Every structural change retires the touched partitions and creates new
    ones with fresh ids.
    """

    def __init__(self) -> None:
        self._ids = itertools.count(1)
        self.parts: dict[int, Partition] = {}
        self.port_owner: dict[int, int] = {}
        self.flow_part: dict[Hashable, int] = {}
        self.flow_ports: dict[Hashable, tuple[int, ...]] = {}
        self._order: dict[Hashable, int] = {}
        self._ctr = itertools.count()

    def __len__(self) -> int:
        return len(self.parts)

    def partition_of(self, flow: Hashable) -> Partition:
        try:
            return self.parts[self.flow_part[flow]]
        except KeyError:
            raise UnknownFlow(flow) from None

    def touching(self, ports: Iterable[int]) -> list[Partition]:
        seen: dict[int, None] = {}
        for p in ports:
            pid = self.port_owner.get(p)
            if pid is not None:
                seen[pid] = None
        return [self.parts[pid] for pid in seen]

    def _new(self, flows: list[Hashable], ports: set[int]) -> Partition:
        part = Partition(next(self._ids), flows, ports)
        self.parts[part.id] = part
        for f in flows:
            self.flow_part[f] = part.id
        for p in ports:
            self.port_owner[p] = part.id
        return part

    def _retire(self, part: Partition) -> None:
        del self.parts[part.id]
        for p in part.ports:
            if self.port_owner.get(p) == part.id:
                del self.port_owner[p]

    def _sorted(self, flows: Iterable[Hashable]) -> list[Hashable]:
        return sorted(flows, key=self._order.__getitem__)

    def enter(self, flow: Hashable, ports: Sequence[int]) -> Change:
        if flow in self.flow_part:
            raise ValueError(f"flow {flow!r} already partitioned")
        ports = tuple(dict.fromkeys(ports))
        self._order[flow] = next(self._ctr)
        self.flow_ports[flow] = ports
        affected = self.touching(ports)
        for part in affected:
            self._retire(part)
        if not affected:
            created = [self._new([flow], set(ports))]
        elif len(affected) == 1:
            old = affected[0]
            created = [self._new(old.flows + [flow], old.ports | set(ports))]
        else:
            members = self._sorted([f for part in affected for f in part.flows] + [flow])
            created = [self._new(fl, pt) for fl, pt in components({f: self.flow_ports[f] for f in members})]
        return Change(affected, created)

    def leave(self, flow: Hashable) -> Change:
        part = self.partition_of(flow)
        self._retire(part)
        del self.flow_part[flow]
        del self.flow_ports[flow]
        del self._order[flow]
        rest = [f for f in part.flows if f != flow]
        if not rest:
            created = []
        elif len(rest) == 1:
            created = [self._new(rest, set(self.flow_ports[rest[0]]))]
        else:
            created = [self._new(fl, pt) for fl, pt in components({f: self.flow_ports[f] for f in rest})]
        return Change([part], created)

    def snapshot(self) -> list[tuple[frozenset, frozenset]]:
        return sorted(((p.flow_set(), frozenset(p.ports)) for p in self.parts.values()),
                      key=lambda x: sorted(map(repr, x[0])))

    def check(self) -> None:
        """Assert disjointness and coverage; used by tests."""
        owner: dict[int, int] = {}
        for part in self.parts.values():
            for p in part.ports:
                assert p not in owner, f"port {p} in partitions {owner[p]} and {part.id}"
                owner[p] = part.id
            for f in part.flows:
                assert self.flow_part[f] == part.id
        assert owner == self.port_owner
        assert len(self.flow_part) == sum(len(p.flows) for p in self.parts.values())
