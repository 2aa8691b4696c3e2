"""Collective-communication flow schedules and the interrupt feed.

Hosts are referred to by their index in ``Topology.hosts``.
"""
from __future__ import annotations

import csv
import heapq
import io
import itertools
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Sequence

from .simcore import INF_TIME


class InvalidSpec(ValueError):
    pass


class PlacementInfeasible(ValueError):
    pass


class CollectiveKind(str, Enum):
    RingAllReduce = "RingAllReduce"
    PointToPoint = "PointToPoint"
    AllToAll = "AllToAll"


class InterruptKind(str, Enum):
    FlowEnter = "FlowEnter"
    FlowExit = "FlowExit"
    Reroute = "Reroute"


class InterruptMode(str, Enum):
    Predetermined = "Predetermined"
    RealTime = "RealTime"


@dataclass(frozen=True)
class FlowSpec:
    id: str
    src: int
    dst: int
    size: int
    start: int = 0
    group: str = "custom"
    deps: tuple[str, ...] = ()
    gap: int = 0  # idle time after the last dependency completes

    def __post_init__(self):
        if self.size <= 0:
            raise InvalidSpec(f"flow {self.id}: size must be positive")
        if self.src == self.dst:
            raise InvalidSpec(f"flow {self.id}: src equals dst")
        if self.start < 0 or self.gap < 0:
            raise InvalidSpec(f"flow {self.id}: negative start or gap")
        object.__setattr__(self, "deps", tuple(self.deps))


@dataclass(frozen=True)
class CollectiveSpec:
    kind: CollectiveKind
    participants: tuple[int, ...]
    payload: int
    repetitions: int = 1
    period: int = 0          # 0 chains repetitions by dependency
    start: int = 0
    group: str = "custom"
    name: str = "coll"
    after: tuple[str, ...] = ()   # names of collectives that must finish first
    gap: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", CollectiveKind(self.kind))
        object.__setattr__(self, "participants", tuple(self.participants))
        object.__setattr__(self, "after", tuple(self.after))
        if len(self.participants) < 2:
            raise InvalidSpec(f"{self.name}: need at least two participants")
        if len(set(self.participants)) != len(self.participants):
            raise InvalidSpec(f"{self.name}: duplicate participants")
        if self.payload <= 0:
            raise InvalidSpec(f"{self.name}: payload must be positive")
        if self.repetitions < 1 or self.period < 0:
            raise InvalidSpec(f"{self.name}: bad repetition/period")
        if self.kind is CollectiveKind.PointToPoint and len(self.participants) != 2:
            raise InvalidSpec(f"{self.name}: point-to-point takes exactly two participants")


@dataclass(frozen=True)
class InterruptEvent:
    kind: InterruptKind
    timestamp: int
    known_in_advance: bool
    payload: Any = None

    def __post_init__(self):
        object.__setattr__(self, "kind", InterruptKind(self.kind))


@dataclass
class Expansion:
    flows: list[FlowSpec]
    first: list[str]      # flows gated by the collective's external deps
    last: list[str]       # flows whose completion finishes the collective


def _expand(spec: CollectiveSpec, ext_deps: tuple[str, ...] = ()) -> Expansion:
    P = len(spec.participants)
    parts = spec.participants
    flows: list[FlowSpec] = []
    first: list[str] = []
    prev_last: list[str] = []
    chained = spec.period == 0
    for rep in range(spec.repetitions):
        start = spec.start + rep * spec.period
        gate = ext_deps if rep == 0 or not chained else ()
        tag = f"{spec.name}/r{rep}" if spec.repetitions > 1 else spec.name
        if spec.kind is CollectiveKind.PointToPoint:
            fid = tag
            deps = gate + (tuple(prev_last) if chained else ())
            flows.append(FlowSpec(fid, parts[0], parts[1], spec.payload, start, spec.group, deps, spec.gap))
            if rep == 0:
                first.append(fid)
            prev_last = [fid]
        elif spec.kind is CollectiveKind.RingAllReduce:
            if spec.payload % P:
                raise InvalidSpec(f"{spec.name}: payload {spec.payload} not divisible by {P}")
            chunk = spec.payload // P
            prev_step: list[str] = []
            for step in range(2 * (P - 1)):
                cur = []
                for j in range(P):
                    fid = f"{tag}/s{step}/p{j}"
                    if step == 0:
                        deps = gate
                        if chained and prev_last:
                            deps = deps + (prev_last[j], prev_last[(j - 1) % P])
                        if rep == 0:
                            first.append(fid)
                    else:
                        deps = (prev_step[j], prev_step[(j - 1) % P])
                    flows.append(FlowSpec(fid, parts[j], parts[(j + 1) % P], chunk, start,
                                          spec.group, deps, spec.gap if step == 0 else 0))
                    cur.append(fid)
                prev_step = cur
            prev_last = prev_step
        else:
            if spec.payload % (P - 1):
                raise InvalidSpec(f"{spec.name}: payload {spec.payload} not divisible by {P - 1}")
            chunk = spec.payload // (P - 1)
            cur = []
            by_host: dict[int, list[str]] = {}
            for i, j in itertools.permutations(range(P), 2):
                fid = f"{tag}/{i}-{j}"
                deps = gate
                if chained and prev_last:
                    deps = deps + tuple(prev_last_by[parts[i]])
                flows.append(FlowSpec(fid, parts[i], parts[j], chunk, start, spec.group, deps, spec.gap))
                if rep == 0:
                    first.append(fid)
                cur.append(fid)
                by_host.setdefault(parts[i], []).append(fid)
                by_host.setdefault(parts[j], []).append(fid)
            prev_last = cur
            prev_last_by = by_host
    return Expansion(flows, first, prev_last)


def expand_collective(spec: CollectiveSpec) -> list[FlowSpec]:
    """Decompose one collective into point-to-point flows."""
    return _expand(spec).flows


def expand_schedule(collectives: Sequence[CollectiveSpec]) -> list[FlowSpec]:
    """Expand collectives in order, wiring ``after`` links to terminal flows."""
    done: dict[str, Expansion] = {}
    out: list[FlowSpec] = []
    for c in collectives:
        if c.name in done:
            raise InvalidSpec(f"duplicate collective name {c.name!r}")
        ext: list[str] = []
        for dep in c.after:
            if dep not in done:
                raise InvalidSpec(f"{c.name}: depends on unknown or later collective {dep!r}")
            ext.extend(done[dep].last)
        exp = _expand(c, tuple(ext))
        done[c.name] = exp
        out.extend(exp.flows)
    check_acyclic(out)
    return out


def check_acyclic(flows: Sequence[FlowSpec]) -> None:
    ids = {f.id: f for f in flows}
    if len(ids) != len(flows):
        raise InvalidSpec("duplicate flow ids")
    state: dict[str, int] = {}
    for root in ids:
        if root in state:
            continue
        stack = [(root, iter(ids[root].deps))]
        state[root] = 1
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                state[node] = 2
                stack.pop()
                continue
            if nxt not in ids:
                raise InvalidSpec(f"flow {node}: unknown dependency {nxt!r}")
            s = state.get(nxt)
            if s == 1:
                raise InvalidSpec(f"dependency cycle through {nxt!r}")
            if s is None:
                state[nxt] = 1
                stack.append((nxt, iter(ids[nxt].deps)))


# -- LLM training iteration ------------------------------------------------------------

@dataclass(frozen=True)
class ParallelConfig:
    dp: int = 1
    pp: int = 1
    ep: int = 1
    model_bytes: int = 64 << 20
    activation_bytes: int | None = None   # per micro-batch PP message
    expert_bytes: int | None = None       # per EP all-to-all, per participant
    micro_batches: int | None = None      # defaults to pp
    moe_layers: int = 1                   # EP all-to-alls per stage per pass
    iterations: int = 1
    iteration_period: int = 0             # 0 chains iterations by dependency
    gap: int = 0                          # idle time between dependent phases

    def sizes(self) -> tuple[int, int, int]:
        dp_payload = self.model_bytes // self.pp
        dp_payload -= dp_payload % max(self.dp, 1)
        act = self.activation_bytes if self.activation_bytes is not None else self.model_bytes // 256
        exp = self.expert_bytes if self.expert_bytes is not None else self.model_bytes // (64 * self.pp)
        if self.ep > 1:
            exp -= exp % (self.ep - 1)
        return dp_payload, act, exp


@dataclass(frozen=True)
class Placement:
    dp: int
    pp: int
    hosts: tuple[int, ...]

    def host(self, rank: int, stage: int) -> int:
        return self.hosts[rank * self.pp + stage]

    def dp_group(self, stage: int) -> tuple[int, ...]:
        return tuple(self.host(r, stage) for r in range(self.dp))

    def pipeline(self, rank: int) -> tuple[int, ...]:
        return tuple(self.host(rank, s) for s in range(self.pp))


def place(cfg: ParallelConfig, hosts: Sequence[int]) -> Placement:
    """Pipelines occupy consecutive hosts (one pod); DP groups stride across pods."""
    if min(cfg.dp, cfg.pp, cfg.ep) < 1:
        raise PlacementInfeasible("parallel degrees must be >= 1")
    if cfg.dp * cfg.pp > len(hosts):
        raise PlacementInfeasible(f"dp*pp={cfg.dp * cfg.pp} exceeds {len(hosts)} hosts")
    if cfg.ep > 1 and cfg.dp % cfg.ep:
        raise PlacementInfeasible(f"ep={cfg.ep} must divide dp={cfg.dp}")
    return Placement(cfg.dp, cfg.pp, tuple(hosts[: cfg.dp * cfg.pp]))


def generate_llm_iteration(cfg: ParallelConfig, hosts: Sequence[int]) -> list[CollectiveSpec]:
    """Collectives for ``cfg.iterations`` training iterations (GPipe order, micro-batch 1)."""
    pl = place(cfg, hosts)
    dp_payload, act, exp = cfg.sizes()
    mb = cfg.micro_batches or cfg.pp
    out: list[CollectiveSpec] = []
    prev_iter: list[str] = []
    for it in range(cfg.iterations):
        t0 = it * cfg.iteration_period
        gate = tuple(prev_iter) if cfg.iteration_period == 0 else ()
        pre = f"it{it}"
        last_bwd: dict[int, list[str]] = {s: [] for s in range(cfg.pp)}
        ep_names: dict[int, list[str]] = {s: [] for s in range(cfg.pp)}
        for r in range(cfg.dp):
            fwd: dict[tuple[int, int], str] = {}
            for m in range(mb):
                for s in range(cfg.pp - 1):
                    name = f"{pre}/pp/fwd/r{r}/m{m}/s{s}"
                    after = [fwd[(m, s - 1)]] if s > 0 else []
                    if m > 0:
                        after.append(fwd[(m - 1, s)])
                    if not after:
                        after = list(gate)
                    fwd[(m, s)] = name
                    out.append(CollectiveSpec(CollectiveKind.PointToPoint, (pl.host(r, s), pl.host(r, s + 1)),
                                              act, start=t0, group="PP", name=name, after=tuple(after),
                                              gap=cfg.gap))
            bwd: dict[tuple[int, int], str] = {}
            for m in reversed(range(mb)):
                for s in reversed(range(1, cfg.pp)):
                    name = f"{pre}/pp/bwd/r{r}/m{m}/s{s}"
                    after = []
                    if s < cfg.pp - 1:
                        after.append(bwd[(m, s + 1)])
                    else:
                        after.append(fwd[(mb - 1, cfg.pp - 2)])
                    if m < mb - 1:
                        after.append(bwd[(m + 1, s)])
                    bwd[(m, s)] = name
                    out.append(CollectiveSpec(CollectiveKind.PointToPoint, (pl.host(r, s), pl.host(r, s - 1)),
                                              act, start=t0, group="PP", name=name, after=tuple(after),
                                              gap=cfg.gap))
            for s in range(cfg.pp):
                # stage s finishes backward after sending (s>0) or receiving (s=0) its last gradient
                key = (0, s) if s > 0 else (0, 1)
                if cfg.pp > 1:
                    last_bwd[s].append(bwd[key])
        if cfg.ep > 1:
            for s in range(cfg.pp):
                for g in range(cfg.dp // cfg.ep):
                    members = tuple(pl.host(r, s) for r in range(g * cfg.ep, (g + 1) * cfg.ep))
                    for layer in range(cfg.moe_layers):
                        name = f"{pre}/ep/s{s}/g{g}/l{layer}"
                        after = tuple(ep_names[s][-1:]) if ep_names[s] else gate
                        out.append(CollectiveSpec(CollectiveKind.AllToAll, members, exp, start=t0, group="EP",
                                                  name=name, after=after, gap=cfg.gap))
                        ep_names[s].append(name)
        cur_iter: list[str] = []
        if cfg.dp > 1:
            for s in range(cfg.pp):
                after = tuple(last_bwd[s]) + tuple(ep_names[s][-1:])
                if not after:
                    after = gate
                name = f"{pre}/dp/s{s}"
                out.append(CollectiveSpec(CollectiveKind.RingAllReduce, pl.dp_group(s), dp_payload, start=t0,
                                          group="DP", name=name, after=after, gap=cfg.gap))
                cur_iter.append(name)
        else:
            cur_iter = [n for s in range(cfg.pp) for n in last_bwd[s]] + [n for s in ep_names for n in ep_names[s][-1:]]
        prev_iter = cur_iter
    return out


# -- interrupt feed -------------------------------------------------------------------

class InterruptFeed:
    """Known future interrupts, indexed by the ports they will touch.

    In real-time mode nothing is known ahead, so the horizon is always
    :data:`INF_TIME`.
    """

    def __init__(self, mode: InterruptMode | str = InterruptMode.Predetermined) -> None:
        self.mode = InterruptMode(mode)
        self._by_port: dict[int, list[tuple[int, int, Any]]] = {}
        self._retired: set[Any] = set()
        self._seq = itertools.count()
        self.events: list[InterruptEvent] = []

    def announce(self, ev: InterruptEvent, ports: Iterable[int], key: Any = None) -> None:
        if ev.kind is InterruptKind.FlowExit:
            raise InvalidSpec("FlowExit interrupts are generated by the engine")
        self.events.append(ev)
        if self.mode is InterruptMode.RealTime or not ev.known_in_advance:
            return
        key = ev if key is None else key
        item = (ev.timestamp, next(self._seq), key)
        for p in ports:
            heapq.heappush(self._by_port.setdefault(p, []), item)

    def retire(self, key: Any) -> None:
        self._retired.add(key)

    def horizon(self, ports: Iterable[int], now: int) -> int:
        if self.mode is InterruptMode.RealTime:
            return INF_TIME
        best = INF_TIME
        retired = self._retired
        for p in ports:
            h = self._by_port.get(p)
            while h and (h[0][2] in retired or h[0][0] < now):
                heapq.heappop(h)
            if h and h[0][0] < best:
                best = h[0][0]
        return best


def feed_interrupts(flows: Sequence[FlowSpec], mode: InterruptMode | str,
                    ports_of: Any = None) -> InterruptFeed:
    """Announce every flow whose start time is fixed up front.

    ``ports_of`` maps a flow id to the ports it will traverse; without it the
    feed only records the events.
    """
    feed = InterruptFeed(mode)
    for f in flows:
        if f.deps:
            continue
        ev = InterruptEvent(InterruptKind.FlowEnter, f.start, True, f)
        feed.announce(ev, ports_of(f.id) if ports_of else (), key=f.id)
    return feed


# -- schedule file ----------------------------------------------------------------------

SCHEDULE_COLUMNS = ("id", "src", "dst", "size", "start", "group", "deps", "gap")


def dump_schedule(flows: Sequence[FlowSpec]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCHEDULE_COLUMNS)
    for f in flows:
        w.writerow([f.id, f.src, f.dst, f.size, f.start, f.group, ";".join(f.deps), f.gap])
    return buf.getvalue()


def parse_schedule(text: str) -> list[FlowSpec]:
    rows = csv.DictReader(io.StringIO(text))
    missing = set(SCHEDULE_COLUMNS[:7]) - set(rows.fieldnames or ())
    if missing:
        raise InvalidSpec(f"schedule lacks columns: {', '.join(sorted(missing))}")
    out = []
    for n, row in enumerate(rows, start=2):
        try:
            deps = tuple(d for d in (row["deps"] or "").split(";") if d)
            out.append(FlowSpec(row["id"], int(row["src"]), int(row["dst"]), int(row["size"]),
                                int(row["start"] or 0), row["group"] or "custom", deps,
                                int(row.get("gap") or 0)))
        except (TypeError, ValueError) as e:
            raise InvalidSpec(f"schedule line {n}: {e}") from None
    check_acyclic(out)
    return out


def save_schedule(flows: Sequence[FlowSpec], path: str | Path) -> None:
    Path(path).write_text(dump_schedule(flows))


def load_schedule(path: str | Path) -> list[FlowSpec]:
    return parse_schedule(Path(path).read_text())
