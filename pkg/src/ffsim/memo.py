"""Flow conflict graphs and the memo of simulated transients.

A flow conflict graph has one vertex per flow, weighted by its rate, and one
edge per pair of flows that share at least one port, weighted by the number
of shared ports.  It carries no flow identities, so a recurring contention
pattern matches regardless of which hosts produce it.
"""
from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Mapping, Sequence

MAGIC = b"FFMD"
VERSION = 1
ZERO_BUCKET = -(1 << 31)


class InsufficientRemainingBytes(ValueError):
    pass


class MemoFormatError(ValueError):
    pass


def quantize_rate(r: float) -> float:
    """Round to a whole number of bytes per second, the stored resolution."""
    return round(r * 1e9) / 1e9


def rate_bucket(r: float, eps: float) -> int:
    if r <= 0:
        return ZERO_BUCKET
    return round(math.log(r) / math.log1p(eps))


@dataclass
class FlowConflictGraph:
    weights: tuple[float, ...]
    edges: dict[tuple[int, int], int]
    eps: float = 0.01
    keys: tuple | None = field(default=None, compare=False)

    def __post_init__(self):
        self.weights = tuple(quantize_rate(w) for w in self.weights)
        n = len(self.weights)
        adj: list[dict[int, int]] = [{} for _ in range(n)]
        norm = {}
        for (i, j), w in self.edges.items():
            if i == j:
                raise ValueError("self edge")
            if w <= 0:
                continue
            a, b = (i, j) if i < j else (j, i)
            norm[(a, b)] = w
            adj[a][b] = w
            adj[b][a] = w
        self.edges = dict(sorted(norm.items()))
        self.adj = adj
        self.buckets = tuple(rate_bucket(w, self.eps) for w in self.weights)
        self.fingerprint = self._fingerprint()

    @property
    def n(self) -> int:
        return len(self.weights)

    @property
    def m(self) -> int:
        return len(self.edges)

    def degree(self, i: int) -> int:
        return len(self.adj[i])

    def _fingerprint(self) -> str:
        sig = (self.n, self.m, sorted(self.buckets), sorted(self.edges.values()),
               sorted(len(a) for a in self.adj))
        return hashlib.blake2b(repr(sig).encode(), digest_size=16).hexdigest()

    def permuted(self, perm: Sequence[int]) -> "FlowConflictGraph":
        """Relabel vertex ``i`` as ``perm[i]``."""
        w = [0.0] * self.n
        for i, p in enumerate(perm):
            w[p] = self.weights[i]
        e = {(perm[i], perm[j]): x for (i, j), x in self.edges.items()}
        keys = None if self.keys is None else tuple(self.keys[perm.index(i)] for i in range(self.n))
        return FlowConflictGraph(tuple(w), e, self.eps, keys)


def build_fcg(flows: Sequence[Hashable], rates: Mapping[Hashable, float], ports_of: Mapping[Hashable, Sequence[int]],
              eps: float = 0.01) -> FlowConflictGraph:
    idx = {f: i for i, f in enumerate(flows)}
    users: dict[int, list[int]] = {}
    for f in flows:
        for p in dict.fromkeys(ports_of[f]):
            users.setdefault(p, []).append(idx[f])
    edges: dict[tuple[int, int], int] = {}
    for us in users.values():
        for a in range(len(us)):
            for b in range(a + 1, len(us)):
                i, j = us[a], us[b]
                key = (i, j) if i < j else (j, i)
                edges[key] = edges.get(key, 0) + 1
    return FlowConflictGraph(tuple(rates[f] for f in flows), edges, eps, tuple(flows))


# -- matching ------------------------------------------------------------------------

def _order(g: FlowConflictGraph) -> list[int]:
    """Visit order: each component from its highest-degree vertex, growing along edges."""
    n = g.n
    seen = [False] * n
    order: list[int] = []
    for root in sorted(range(n), key=lambda v: (-g.degree(v), v)):
        if seen[root]:
            continue
        seen[root] = True
        frontier = [root]
        while frontier:
            order.extend(frontier)
            nxt = []
            for v in frontier:
                for w in sorted(g.adj[v], key=lambda x: (-g.degree(x), x)):
                    if not seen[w]:
                        seen[w] = True
                        nxt.append(w)
            frontier = nxt
    return order


def find_isomorphism(g1: FlowConflictGraph, g2: FlowConflictGraph) -> list[int] | None:
    """Weighted isomorphism ``g1 -> g2`` or None.

    Vertices are compatible when their rates fall in the same bucket; edge
    weights must match exactly and non-edges must map to non-edges.
    """
    if g1.n != g2.n or g1.m != g2.m or g1.fingerprint != g2.fingerprint:
        return None
    n = g1.n
    order = _order(g1)
    # the earliest-ordered mapped neighbour anchors each vertex's candidate set
    pos = {v: k for k, v in enumerate(order)}
    anchor = [None] * n
    for v in order:
        prev = [u for u in g1.adj[v] if pos[u] < pos[v]]
        anchor[v] = min(prev, key=pos.__getitem__) if prev else None
    by_class: dict[tuple[int, int], list[int]] = {}
    for v in range(n):
        by_class.setdefault((g2.buckets[v], g2.degree(v)), []).append(v)
    m12 = [-1] * n
    used = [False] * n

    def feasible(u: int, c: int) -> bool:
        for w, x in g1.adj[u].items():
            mw = m12[w]
            if mw >= 0 and g2.adj[c].get(mw) != x:
                return False
        # every mapped neighbour of c must come from a neighbour of u
        for y in g2.adj[c]:
            if used[y] and m12_inv[y] not in g1.adj[u]:
                return False
        return True

    m12_inv = [-1] * n
    stack: list[tuple[int, list[int], int]] = []
    k = 0

    def candidates(u: int) -> list[int]:
        cls = by_class.get((g1.buckets[u], g1.degree(u)), [])
        a = anchor[u]
        if a is None:
            return [c for c in cls if not used[c]]
        nbrs = g2.adj[m12[a]]
        return [c for c in cls if not used[c] and c in nbrs]

    cands = candidates(order[0]) if n else []
    idx = 0
    while True:
        if k == n:
            return m12
        u = order[k]
        placed = False
        while idx < len(cands):
            c = cands[idx]
            idx += 1
            if feasible(u, c):
                m12[u] = c
                m12_inv[c] = u
                used[c] = True
                stack.append((u, cands, idx))
                k += 1
                if k < n:
                    cands = candidates(order[k])
                    idx = 0
                placed = True
                break
        if placed:
            continue
        if not stack:
            return None
        u, cands, idx = stack.pop()
        c = m12[u]
        used[c] = False
        m12_inv[c] = -1
        m12[u] = -1
        k -= 1


def is_isomorphism(g1: FlowConflictGraph, g2: FlowConflictGraph, m: Sequence[int]) -> bool:
    if sorted(m) != list(range(g2.n)) or g1.n != g2.n:
        return False
    if any(g1.buckets[i] != g2.buckets[m[i]] for i in range(g1.n)):
        return False
    mapped = {(min(m[i], m[j]), max(m[i], m[j])): w for (i, j), w in g1.edges.items()}
    return mapped == g2.edges


# -- database --------------------------------------------------------------------------

@dataclass
class MemoEntry:
    key: FlowConflictGraph
    end: FlowConflictGraph
    size_f: tuple[int, ...]
    t_conv: int

    def __post_init__(self):
        if self.key.n != self.end.n or self.key.n != len(self.size_f):
            raise ValueError("entry vertex sets differ")
        if self.t_conv <= 0:
            raise ValueError("convergence time must be positive")
        if any(s < 0 for s in self.size_f):
            raise ValueError("negative transient bytes")
        self.size_f = tuple(int(s) for s in self.size_f)


@dataclass(frozen=True)
class MemoStats:
    entries: int
    hits: int
    misses: int
    bytes: int
    inserts: int = 0
    fallbacks: int = 0


@dataclass
class Hit:
    entry: MemoEntry
    mapping: list[int]      # key vertex -> query vertex


class MemoDb:
    def __init__(self, eps: float = 0.01) -> None:
        self.eps = eps
        self._buckets: dict[str, list[MemoEntry]] = {}
        self.hits = 0
        self.misses = 0
        self.inserts = 0
        self.fallbacks = 0

    def __len__(self) -> int:
        return sum(len(v) for v in self._buckets.values())

    def entries(self) -> list[MemoEntry]:
        return [e for fp in self._buckets for e in self._buckets[fp]]

    def _find(self, g: FlowConflictGraph) -> Hit | None:
        for e in self._buckets.get(g.fingerprint, ()):
            m = find_isomorphism(e.key, g)
            if m is not None:
                return Hit(e, m)
        return None

    def lookup(self, g: FlowConflictGraph) -> Hit | None:
        hit = self._find(g)
        if hit is None:
            self.misses += 1
        else:
            self.hits += 1
        return hit

    def store(self, key: FlowConflictGraph, end: FlowConflictGraph, size_f: Sequence[int], t_conv: int) -> bool:
        """Insert unless an isomorphic key is present (first writer wins)."""
        if self._find(key) is not None:
            return False
        self._buckets.setdefault(key.fingerprint, []).append(MemoEntry(key, end, tuple(size_f), int(t_conv)))
        self.inserts += 1
        return True

    def stats(self) -> MemoStats:
        return MemoStats(len(self), self.hits, self.misses, self.nbytes(), self.inserts, self.fallbacks)

    # -- serialization --
    def nbytes(self) -> int:
        return len(self.to_bytes())

    def to_bytes(self) -> bytes:
        out = [struct.pack("<4sHI", MAGIC, VERSION, len(self))]
        for e in self.entries():
            out.append(_pack_graph(e.key))
            out.append(_pack_graph(e.end))
            out.append(struct.pack(f"<{len(e.size_f)}q", *e.size_f))
            out.append(struct.pack("<q", e.t_conv))
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes, eps: float = 0.01) -> "MemoDb":
        try:
            magic, ver, count = struct.unpack_from("<4sHI", data, 0)
        except struct.error:
            raise MemoFormatError("truncated header") from None
        if magic != MAGIC:
            raise MemoFormatError("not a memo snapshot")
        if ver != VERSION:
            raise MemoFormatError(f"unsupported version {ver}")
        off = struct.calcsize("<4sHI")
        db = cls(eps)
        try:
            for _ in range(count):
                key, off = _unpack_graph(data, off, eps)
                end, off = _unpack_graph(data, off, eps)
                size_f = struct.unpack_from(f"<{key.n}q", data, off)
                off += 8 * key.n
                (t_conv,) = struct.unpack_from("<q", data, off)
                off += 8
                db._buckets.setdefault(key.fingerprint, []).append(MemoEntry(key, end, size_f, t_conv))
        except struct.error:
            raise MemoFormatError("truncated entry") from None
        if off != len(data):
            raise MemoFormatError("trailing bytes")
        return db

    def save(self, path: str | Path) -> None:
        p = Path(path)
        tmp = p.with_name(p.name + ".tmp")
        tmp.write_bytes(self.to_bytes())
        tmp.replace(p)

    @classmethod
    def load(cls, path: str | Path, eps: float = 0.01) -> "MemoDb":
        return cls.from_bytes(Path(path).read_bytes(), eps)


def _pack_graph(g: FlowConflictGraph) -> bytes:
    parts = [struct.pack("<I", g.n),
             struct.pack(f"<{g.n}q", *(round(w * 1e9) for w in g.weights)),
             struct.pack("<I", g.m)]
    for (i, j), w in g.edges.items():
        parts.append(struct.pack("<III", i, j, w))
    return b"".join(parts)


def _unpack_graph(data: bytes, off: int, eps: float) -> tuple[FlowConflictGraph, int]:
    (n,) = struct.unpack_from("<I", data, off)
    off += 4
    w = struct.unpack_from(f"<{n}q", data, off)
    off += 8 * n
    (m,) = struct.unpack_from("<I", data, off)
    off += 4
    edges = {}
    for _ in range(m):
        i, j, x = struct.unpack_from("<III", data, off)
        off += 12
        if i >= n or j >= n:
            raise MemoFormatError("edge endpoint out of range")
        edges[(i, j)] = x
    return FlowConflictGraph(tuple(v / 1e9 for v in w), edges, eps), off


# -- replay ----------------------------------------------------------------------------

@dataclass
class Replay:
    t_conv: int
    prefix_bytes: list[int]     # indexed by query vertex
    rates: list[float]          # indexed by query vertex


def apply(hit: Hit, unsent: Sequence[int]) -> Replay:
    """Translate a stored transient onto the query partition's vertices.

    Raises :class:`InsufficientRemainingBytes` when some flow has no more
    bytes left than the stored transient moved; the caller then simulates
    packet by packet.
    """
    e, m = hit.entry, hit.mapping
    n = e.key.n
    size = [0] * n
    rate = [0.0] * n
    for i in range(n):
        j = m[i]
        size[j] = e.size_f[i]
        rate[j] = e.end.weights[i]
    for j in range(n):
        if unsent[j] <= size[j]:
            raise InsufficientRemainingBytes(f"vertex {j}: {unsent[j]} left, transient moved {size[j]}")
        if rate[j] <= 0:
            raise InsufficientRemainingBytes(f"vertex {j}: stored end rate is zero")
    return Replay(e.t_conv, size, rate)
