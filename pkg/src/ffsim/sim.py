"""Packet-level simulation with steady-state fast-forwarding and transient memoization.

Every flow and every port keeps a local clock ``now - offset``.  Skipping a
partition adds the skip length to the offsets of its flows and ports and to
the timestamps of its pending events, so its packets, timers and telemetry
resume exactly where they left off.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

from . import memo as memo_mod
from .cca import AckInfo, CcaParams, Controller, Variant, make_controller
from .memo import MemoDb, build_fcg
from .net import (ACK_SIZE, Packet, Port, Route, Topology, ack_delay, base_rtt, dequeue, enqueue, mark_ecn,
                  route as ecmp_route)
from .partition import Change, IncrementalPartitioner, PartitionState
from .simcore import INF_TIME, Engine, EventKind
from .steady import (BoundCheck, EmptyOrZeroWindow, NothingToSkip, ProgressTrace, RateWindow, SkipRecord, SkipSegment,
                     check_segment, check_steady,
                     cofluctuation, end_skip, execute_skip, plan_steady, plan_with_prefix, segments, skip_back)
from .workload import FlowSpec, InterruptEvent, InterruptFeed, InterruptKind, InterruptMode


class Mode(str, Enum):
    Baseline = "baseline"
    SteadyOnly = "steady-only"
    Wormhole = "wormhole"


class SimulationStalled(RuntimeError):
    pass


@dataclass
class SimParams:
    mode: Mode = Mode.Wormhole
    interrupt_mode: InterruptMode = InterruptMode.Predetermined
    theta: float = 0.05
    l: int = 8
    sample_mult: float = 1.0          # sample interval = mult x smoothed RTT at window start
    sample_interval: int | None = None  # fixed interval in ns, overrides sample_mult
    eps_match: float = 0.01
    include_ack_ports: bool = False
    cca: CcaParams = field(default_factory=CcaParams)
    ack_size: int = ACK_SIZE
    seed: int = 0
    max_skip: int | None = None
    record_progress: bool = False
    log_hash: bool = False
    drop_once: tuple[str, int] | None = None
    probe_interval: int | None = None
    shadow: bool = False              # measure every skip against a detached packet-level replay

    def __post_init__(self):
        self.mode = Mode(self.mode)
        self.interrupt_mode = InterruptMode(self.interrupt_mode)
        if not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")
        if self.l < 2:
            raise ValueError("l must be >= 2")


class Flow:
    __slots__ = (
        "key", "spec", "route", "ports", "pids", "bws", "ack_delay", "base_rtt", "size", "adv",
        "snd_nxt", "snd_una", "rcv_nxt", "offset", "cca", "window", "started", "finished", "waiting",
        "start_t", "finish_t", "deps_left", "release", "last_progress", "rto_ev", "rec", "trace",
        "timeouts", "sent_pkts", "line_rate", "hpcc", "next_tx", "pace_ev",
    )

    def __init__(self, key: int, spec: FlowSpec, r: Route, pids: tuple[int, ...], ack_d: int, rtt0: int):
        self.key = key
        self.spec = spec
        self.route = r
        self.ports = r.ports
        self.pids = pids
        self.bws = tuple(p.bw_f for p in r.ports)
        self.line_rate = min(self.bws)
        self.ack_delay = ack_d
        self.base_rtt = rtt0
        self.size = spec.size
        self.adv = 0
        self.snd_nxt = self.snd_una = self.rcv_nxt = 0
        self.offset = 0
        self.cca: Controller | None = None
        self.window: RateWindow | None = None
        self.started = self.finished = self.waiting = False
        self.start_t = self.finish_t = -1
        self.deps_left = len(spec.deps)
        self.release = spec.start
        self.last_progress = 0
        self.rto_ev = None
        self.rec = None
        self.trace: list[tuple[int, int]] | None = None
        self.timeouts = 0
        self.sent_pkts = 0
        self.hpcc = False
        self.next_tx = 0.0
        self.pace_ev = None

    @property
    def unsent(self) -> int:
        return self.size - self.adv - self.snd_nxt

    @property
    def inflight(self) -> int:
        return self.snd_nxt - self.snd_una

    @property
    def acked(self) -> int:
        return self.snd_una + self.adv

    def __repr__(self) -> str:
        return f"Flow({self.spec.id})"


class PartRec:
    __slots__ = ("pid", "flows", "ports", "port_ids", "state", "skip", "end_ev", "fresh", "born",
                 "pending_store")

    def __init__(self, pid: int, flows: list[Flow], ports: list[Port], port_ids: set[int], now: int):
        self.pid = pid
        self.flows = flows
        self.ports = ports
        self.port_ids = port_ids
        self.state = PartitionState.Unsteady
        self.skip: SkipRecord | None = None
        self.end_ev = None
        self.fresh = False
        self.born = now
        self.pending_store = None


@dataclass
class CoStability:
    flow: str
    t: int
    rate_fluct: float
    metrics: dict[str, float]


@dataclass
class FlowResult:
    id: str
    size: int
    start: int
    finish: int

    @property
    def fct(self) -> int:
        return self.finish - self.start


class Simulator:
    def __init__(self, topo: Topology, flows: Sequence[FlowSpec], params: SimParams | None = None,
                 db: MemoDb | None = None) -> None:
        if any(pt.tx_bytes or pt.q for pt in topo.ports):
            raise ValueError("topology carries state from an earlier run; build a fresh one")
        self.topo = topo
        self.p = params or SimParams()
        p = self.p
        self.e = Engine(log_hash=p.log_hash)
        self.baseline = p.mode is Mode.Baseline
        self.owned = not self.baseline
        self.wormhole = p.mode is Mode.Wormhole
        hosts = topo.hosts
        self.flows: list[Flow] = []
        self.by_id: dict[str, Flow] = {}
        mtu = p.cca.mtu
        # one connection per host pair, reused by every flow between them (a persistent queue pair)
        conns: dict[tuple[int, int], int] = {}
        for k, spec in enumerate(flows):
            if spec.id in self.by_id:
                raise ValueError(f"duplicate flow id {spec.id!r}")
            for h in (spec.src, spec.dst):
                if not 0 <= h < len(hosts):
                    raise ValueError(f"flow {spec.id}: host index {h} out of range")
            conn = conns.setdefault((spec.src, spec.dst), len(conns))
            r = ecmp_route(topo, hosts[spec.src], hosts[spec.dst], sport=10_000 + conn, dport=4791, salt=p.seed)
            pids = list(r.ids)
            if p.include_ack_ports:
                pids += [topo.port_between(pt.peer, pt.node).id for pt in r.ports]
            f = Flow(k, spec, r, tuple(dict.fromkeys(pids)), ack_delay(r, p.ack_size), base_rtt(r, mtu, p.ack_size))
            f.hpcc = p.cca.variant is Variant.HpccLike
            if p.record_progress:
                f.trace = []
            self.flows.append(f)
            self.by_id[spec.id] = f
        self.ref_rtt = max((f.base_rtt for f in self.flows), default=1)
        self.dependents: dict[str, list[Flow]] = {}
        for f in self.flows:
            for d in f.spec.deps:
                if d not in self.by_id:
                    raise ValueError(f"flow {f.spec.id}: unknown dependency {d!r}")
                self.dependents.setdefault(d, []).append(f)

        self.feed = InterruptFeed(p.interrupt_mode)
        self.partitioner = IncrementalPartitioner() if self.owned else None
        self.parts: dict[int, PartRec] = {}
        self.db = db if db is not None else MemoDb(p.eps_match)
        self._settle_pending = False
        self._settle_new: list[Flow] = []
        self._dropped_once = False
        self.drop_target_sends = 0
        self.skips: list[SkipRecord] = []
        self.segments: list[SkipSegment] = []
        self.costability: list[CoStability] = []
        self.skip_backs = 0
        self.memo_applied = 0
        self.freeze_checks = 0
        self.freeze_violations = 0
        self.pool_samples: list[tuple[int, int, int, int, int]] = []
        self.drops = 0
        self.is_shadow = False
        self.shadow_checks: list[BoundCheck] = []
        self.memo_log: list[tuple[int, str, tuple[str, ...]]] = []   # (time, hit|miss|fallback|insert, flow ids)
        self._shadow_traces: dict[int, dict[str, ProgressTrace]] = {}

        e = self.e
        e.on(EventKind.PacketArrival, self._on_arrival)
        e.on(EventKind.PacketDeparture, self._on_departure)
        e.on(EventKind.CcaTimer, self._on_timer)
        e.on(EventKind.FlowStart, self._on_flow_start)
        e.on(EventKind.Interrupt, self._on_interrupt)
        e.on(EventKind.Control, self._on_control)
        for f in self.flows:
            if not f.spec.deps:
                self._schedule_start(f, f.spec.start)
        if p.probe_interval:
            e.schedule(0, EventKind.Control, ("probe",))

    # -- public -----------------------------------------------------------------------
    def schedule_reroute(self, flow_id: str, t: int, alt: Route, known: bool = True) -> None:
        """Move a flow onto ``alt`` at time ``t`` (the alternate path is supplied by the caller)."""
        f = self.by_id[flow_id]
        ev = InterruptEvent(InterruptKind.Reroute, t, known, (flow_id, alt))
        ports = set(f.pids) | set(alt.ids)
        self.feed.announce(ev, sorted(ports), key=("reroute", flow_id, t))
        self.e.schedule(t, EventKind.Interrupt, ev)

    def run(self) -> None:
        self.e.run()
        if self.p.probe_interval:
            self._probe()
        left = [f.spec.id for f in self.flows if not f.finished]
        if left:
            raise SimulationStalled(f"{len(left)} flows never finished, e.g. {left[:3]}")

    def results(self) -> list[FlowResult]:
        return [FlowResult(f.spec.id, f.size, f.start_t, f.finish_t) for f in self.flows]

    def name_of(self, key: int) -> str:
        return self.flows[key].spec.id

    # -- flow lifecycle ---------------------------------------------------------------------
    def _schedule_start(self, f: Flow, t: int) -> None:
        self.e.schedule(t, EventKind.FlowStart, f)
        self.feed.announce(InterruptEvent(InterruptKind.FlowEnter, t, True, f.spec), f.pids, key=f.key)

    def _on_flow_start(self, ev) -> None:
        f = ev.payload
        self.feed.retire(f.key)
        self._start_flow(f)

    def _start_flow(self, f: Flow) -> None:
        now = self.e.now
        f.started = True
        f.start_t = now
        f.cca = make_controller(self.p.cca, f.line_rate, f.base_rtt, self.ref_rtt)
        f.last_progress = now - f.offset
        if f.trace is not None:
            f.trace.append((now, 0))
        if self.baseline:
            self._try_send(f)
            return
        f.window = RateWindow(f.key, self.p.l, self._interval(f))
        for part in self.partitioner.touching(f.pids):
            rec = self.parts[part.id]
            if rec.state is PartitionState.Steady:
                self._end_steady(rec)
        f.waiting = True
        self._apply_change(self.partitioner.enter(f.key, f.pids))
        self._settle_new.append(f)
        self._request_settle()

    def _request_settle(self) -> None:
        if not self._settle_pending:
            self._settle_pending = True
            self.e.schedule(self.e.now, EventKind.Control, ("settle",))

    def _interval(self, f: Flow) -> int:
        if self.p.sample_interval:
            return self.p.sample_interval
        srtt = f.cca.srtt if f.cca is not None else f.base_rtt
        return max(1, int(self.p.sample_mult * srtt))

    def _complete(self, f: Flow) -> None:
        now = self.e.now
        f.finished = True
        f.finish_t = now
        self.e.cancel(f.rto_ev)
        self.e.cancel(f.pace_ev)
        f.rto_ev = f.pace_ev = None
        if self.owned:
            self._apply_change(self.partitioner.leave(f.key))
        for d in self.dependents.get(f.spec.id, ()):
            d.deps_left -= 1
            d.release = max(d.release, now + d.spec.gap)
            if d.deps_left == 0:
                if d.release <= now:
                    self._start_flow(d)
                else:
                    self._schedule_start(d, d.release)

    # -- partitions -------------------------------------------------------------------------
    def _apply_change(self, ch: Change) -> None:
        e = self.e
        now = e.now
        for part in ch.removed:
            rec = self.parts.pop(part.id)
            assert rec.state is PartitionState.Unsteady
            e.drop_partition(part.id)
        flows = self.flows
        for part in ch.created:
            fl = [flows[k] for k in part.flows]
            ports = [self.topo.ports[i] for i in sorted(part.ports)]
            rec = PartRec(part.id, fl, ports, part.ports, now)
            self.parts[part.id] = rec
            e.register_partition(part.id, fl + ports)
            for f in fl:
                f.rec = rec
                if f.waiting:
                    rec.fresh = True
                self._reset_window(f)
            if self.wormhole:
                # every birth, whether from an arrival or a departure, gets one memo lookup
                rec.fresh = True
                self._request_settle()

    def _reset_window(self, f: Flow) -> None:
        if f.window is not None:
            f.window.reset(self.e.now - f.offset, f.acked, self._interval(f))

    def _on_settle(self) -> None:
        self._settle_pending = False
        if self.wormhole and not self.is_shadow:
            for rec in list(self.parts.values()):
                if rec.fresh and rec.pid in self.parts:
                    rec.fresh = False
                    self._memo_birth(rec)
        for rec in self.parts.values():
            rec.fresh = False
        new, self._settle_new = self._settle_new, []
        for f in new:
            f.waiting = False
            if not f.finished:
                self._reset_window(f)
                self._try_send(f)

    def _memo_birth(self, rec: PartRec) -> None:
        fl = rec.flows
        if any(f.unsent <= 0 for f in fl):
            return
        keys = [f.key for f in fl]
        rates = {f.key: f.cca.rate for f in fl}
        g = build_fcg(keys, rates, {f.key: f.pids for f in fl}, self.p.eps_match)
        hit = self.db.lookup(g)
        ids = tuple(f.spec.id for f in fl)
        self.memo_log.append((self.e.now, "hit" if hit else "miss", ids))
        if hit is None:
            rec.pending_store = (g, self.e.now, {f.key: f.acked for f in fl})
            return
        try:
            rp = memo_mod.apply(hit, [f.unsent for f in fl])
        except memo_mod.InsufficientRemainingBytes:
            self.db.fallbacks += 1
            self.memo_log.append((self.e.now, "fallback", ids))
            return
        now = self.e.now
        horizon = self.feed.horizon(rec.port_ids, now)
        plan = plan_with_prefix(rec.pid, {f.key: rp.rates[j] for j, f in enumerate(fl)},
                                {f.key: f.unsent for f in fl}, rp.t_conv,
                                {f.key: rp.prefix_bytes[j] for j, f in enumerate(fl)}, horizon, now,
                                limit=self.p.max_skip)
        for j, f in enumerate(fl):
            f.cca.set_rate(rp.rates[j])
        self.memo_applied += 1
        self._begin_skip(rec, plan, memo=True)

    def _check_partition(self, rec: PartRec) -> None:
        if rec.state is PartitionState.Steady or rec.fresh or self.is_shadow:
            return
        theta = self.p.theta
        verdicts = {}
        for g in rec.flows:
            w = g.window
            if g.waiting or not w.full or g.unsent <= 0:
                return
            try:
                v = check_steady(w, theta)
            except EmptyOrZeroWindow:
                return
            if not v.steady:
                return
            verdicts[g.key] = v
        now = self.e.now
        if rec.pending_store is not None:
            g0, born, a0 = rec.pending_store
            rec.pending_store = None
            if now > born:
                keys = [f.key for f in rec.flows]
                end = build_fcg(keys, {k: verdicts[k].rate for k in keys}, {f.key: f.pids for f in rec.flows},
                                self.p.eps_match)
                if self.db.store(g0, end, [f.acked - a0[f.key] for f in rec.flows], now - born):
                    self.memo_log.append((now, "insert", tuple(f.spec.id for f in rec.flows)))
        for g in rec.flows:
            self.costability.append(CoStability(g.spec.id, now, verdicts[g.key].delta,
                                                cofluctuation(g.window.aux, g.line_rate, g.base_rtt)))
        horizon = self.feed.horizon(rec.port_ids, now)
        try:
            plan = plan_steady(rec.pid, verdicts, {g.key: g.unsent for g in rec.flows}, horizon, now,
                               limit=self.p.max_skip)
        except NothingToSkip:
            return
        # a stretch shorter than the observation window is not covered by the window's average
        if plan.delta < max(g.window.l * g.window.interval for g in rec.flows):
            return
        self._begin_skip(rec, plan, memo=False)

    def _begin_skip(self, rec: PartRec, plan, memo: bool) -> None:
        traces = self._shadow(rec, plan.resume) if self.p.shadow else None
        sk = execute_skip(self.e, plan, rec.flows, rec.ports, {f.key: f.acked for f in rec.flows}, memo=memo)
        rec.state = PartitionState.Steady
        rec.skip = sk
        rec.end_ev = self.e.schedule(plan.resume, EventKind.Control, ("end", rec.pid), urgent=True)
        self.skips.append(sk)
        if traces is not None:
            self._shadow_traces[id(sk)] = traces

    def _shadow(self, rec: PartRec, resume: int) -> dict[str, ProgressTrace]:
        """Simulate ``rec`` packet by packet in a detached copy over the planned skip.

        Everything outside the partition is frozen in the copy, which is what
        the partition would see while skipping.
        """
        e = self.e
        now = e.now
        memo: dict[int, object] = {id(self.db): MemoDb(self.p.eps_match)}
        for big in (self.skips, self.segments, self.costability, self.pool_samples, self.shadow_checks, self.memo_log):
            memo[id(big)] = []
        memo[id(self._shadow_traces)] = {}
        if e._hash is not None:
            memo[id(e._hash)] = None
        if e.log is not None:
            memo[id(e.log)] = None
        for f in self.flows:
            if f.trace is not None:
                memo[id(f.trace)] = None
        fork: Simulator = copy.deepcopy(self, memo)
        fork.is_shadow = True
        fork.dependents = {}
        fork.p.shadow = False
        fork.p.probe_interval = None
        fl = [fork.flows[f.key] for f in rec.flows]
        keep: set = set(fl)
        keep.update(fork.topo.ports[p.id] for p in rec.ports)
        fe = fork.e
        for entry in list(fe.queue._heap):
            ev = entry[3]
            if ev.live and ev.owner not in keep:
                fe.cancel(ev)
        fork._settle_pending = False
        fork._settle_new = []
        for f in fl:
            f.trace = [(now, f.acked)]
            if f.waiting:
                f.waiting = False
                fork._try_send(f)
        fe.run_until(now + (resume - now) * 3 // 2 + 1)
        return {f.spec.id: ProgressTrace.from_points(f.trace) for f in fl}

    def _end_steady(self, rec: PartRec) -> None:
        """An unforeseen interrupt reached a steady partition: resume it now."""
        now = self.e.now
        if now < rec.skip.resume:
            skip_back(self.e, rec.skip, now)
            self.skip_backs += 1
        self.e.cancel(rec.end_ev)
        self._finish_skip(rec)

    def _finish_skip(self, rec: PartRec) -> None:
        sk = rec.skip
        for p in sk.ports:
            self.freeze_checks += 1
            if p.q != sk.frozen_q[p.id]:
                self.freeze_violations += 1
        end_skip(sk)
        self.e.clear_offset(rec.pid)
        rec.state = PartitionState.Unsteady
        rec.skip = None
        rec.end_ev = None
        segs = segments(sk, self.name_of)
        self.segments.extend(segs)
        traces = self._shadow_traces.pop(id(sk), None)
        if traces is not None:
            for sg in segs:
                c = check_segment(sg, traces[sg.flow], self.p.theta)
                if c is not None:
                    self.shadow_checks.append(c)
        for f in rec.flows:
            self._reset_window(f)
        for f in list(rec.flows):
            if f.finished:
                continue
            if f.acked >= f.size:
                self._complete(f)
            else:
                self._try_send(f)

    def _on_control(self, ev) -> None:
        tag = ev.payload[0]
        if tag == "settle":
            self._on_settle()
        elif tag == "end":
            rec = self.parts.get(ev.payload[1])
            if rec is not None and rec.state is PartitionState.Steady:
                self._finish_skip(rec)
        elif tag == "probe":
            self._probe()
            if len(self.e.queue) > 0:
                self.e.schedule(self.e.now + self.p.probe_interval, EventKind.Control, ("probe",))

    def _probe(self) -> None:
        """Sample frozen queues and shared-pool occupancy of switches holding paused ports."""
        now = self.e.now
        for rec in self.parts.values():
            if rec.state is not PartitionState.Steady:
                continue
            sk = rec.skip
            for p in sk.ports:
                self.freeze_checks += 1
                if p.q != sk.frozen_q[p.id]:
                    self.freeze_violations += 1
        for sw, pool in self.topo.pools.items():
            ports = self.topo.out_ports(sw)
            paused = sum(p.q for p in ports if p.paused)
            if not paused and not any(p.paused for p in ports):
                continue
            active = sum(p.q for p in ports if not p.paused)
            self.pool_samples.append((now, sw, pool.used, paused, active))

    def _on_interrupt(self, ev) -> None:
        iv: InterruptEvent = ev.payload
        if iv.kind is not InterruptKind.Reroute:
            return
        fid, alt = iv.payload
        self.feed.retire(("reroute", fid, iv.timestamp))
        f = self.by_id[fid]
        if f.finished:
            return
        new_pids = list(alt.ids)
        if self.p.include_ack_ports:
            new_pids += [self.topo.port_between(pt.peer, pt.node).id for pt in alt.ports]
        new_pids = tuple(dict.fromkeys(new_pids))
        if self.owned and f.started:
            for part in self.partitioner.touching(set(f.pids) | set(new_pids)):
                rec = self.parts[part.id]
                if rec.state is PartitionState.Steady:
                    self._end_steady(rec)
        f.route = alt
        f.ports = alt.ports
        f.pids = new_pids
        f.bws = tuple(p.bw_f for p in alt.ports)
        f.ack_delay = ack_delay(alt, self.p.ack_size)
        if self.owned and f.started and not f.finished:
            self._apply_change(self.partitioner.leave(f.key))
            self._apply_change(self.partitioner.enter(f.key, f.pids))

    # -- packets ------------------------------------------------------------------------------
    def _try_send(self, f: Flow) -> None:
        if f.finished or f.waiting or not f.started:
            return
        rec = f.rec
        if rec is not None and rec.state is PartitionState.Steady:
            return
        cwnd = f.cca.cwnd
        end = f.size - f.adv
        nxt = f.snd_nxt
        if nxt >= end:
            return
        mtu = self.p.cca.mtu
        local = self.e.now - f.offset
        if nxt == f.snd_una:
            f.last_progress = local
        port0 = f.ports[0]
        route = f.ports
        hpcc = f.hpcc
        drop = self.p.drop_once
        paced = f.cca.paced
        rate = f.cca.rate
        sent = False
        while nxt < end:
            size = min(mtu, end - nxt)
            if nxt - f.snd_una + size > cwnd and nxt > f.snd_una:
                break
            if paced:
                if f.next_tx > local:
                    if f.pace_ev is None:
                        f.pace_ev = self.e.schedule(math.ceil(f.next_tx) + f.offset, EventKind.CcaTimer,
                                                    (f,), f if self.owned else None)
                    break
                f.next_tx = max(f.next_tx, local - mtu / rate) + size / rate
            pkt = Packet(f, nxt, size, route, local, [] if hpcc else None)
            nxt += size
            f.snd_nxt = nxt
            f.sent_pkts += 1
            sent = True
            if drop is not None and drop[0] == f.spec.id and drop[1] == pkt.seq:
                self.drop_target_sends += 1
                if not self._dropped_once:
                    self._dropped_once = True
                    self.drops += 1
                    continue
            self._arrive(port0, pkt)
        if sent and f.rto_ev is None:
            f.rto_ev = self.e.schedule(self.e.now + f.cca.rto(), EventKind.CcaTimer, f,
                                       f if self.owned else None)

    def _arrive(self, port: Port, pkt: Packet) -> None:
        local = self.e.now - port.offset
        if port.busy_until <= local and not port.queue:
            if port.ecn_k is not None:
                mark_ecn(port, pkt)
            self._transmit(port, pkt, local)
            return
        if not enqueue(port, pkt):
            return
        if not port.pending:
            port.pending = True
            self.e.schedule(port.busy_until + port.offset, EventKind.PacketDeparture, port,
                            port if self.owned else None)

    def _on_departure(self, ev) -> None:
        port: Port = ev.payload
        local = self.e.now - port.offset
        pkt = dequeue(port)
        self._transmit(port, pkt, local)
        if port.queue:
            self.e.schedule(port.busy_until + port.offset, EventKind.PacketDeparture, port,
                            port if self.owned else None)
        else:
            port.pending = False

    def _transmit(self, port: Port, pkt: Packet, local: int) -> None:
        ser = port._ser.get(pkt.size)
        if ser is None:
            ser = port.ser(pkt.size)
        port.busy_until = local + ser
        port.tx_bytes += pkt.size
        if pkt.tel is not None:
            pkt.tel.append((port.q, port.tx_bytes, local))
        hop = pkt.hop + 1
        pkt.hop = hop
        t = self.e.now + ser + port.delay
        if hop == len(pkt.route):
            f = pkt.flow
            pkt.is_ack = True
            self.e.schedule(t + f.ack_delay, EventKind.PacketArrival, pkt, f if self.owned else None)
        else:
            nxt = pkt.route[hop]
            self.e.schedule(t, EventKind.PacketArrival, pkt, nxt if self.owned else None)

    def _on_arrival(self, ev) -> None:
        pkt: Packet = ev.payload
        if pkt.is_ack:
            self._on_ack(pkt)
        else:
            self._arrive(pkt.route[pkt.hop], pkt)

    def _on_ack(self, pkt: Packet) -> None:
        f: Flow = pkt.flow
        if f.finished:
            return
        # receiver: go-back-N, in-order delivery only
        if pkt.seq == f.rcv_nxt:
            f.rcv_nxt += pkt.size
        ack = f.rcv_nxt
        local = self.e.now - f.offset
        newly = 0
        if ack > f.snd_una:
            newly = ack - f.snd_una
            f.snd_una = ack
            f.last_progress = local
            if f.snd_nxt < ack:
                f.snd_nxt = ack
        cca = f.cca
        cca.on_ack(AckInfo(newly, pkt.ecn, local - pkt.sent, f.snd_una, f.snd_nxt, pkt.tel, f.bws, local))
        acked = f.snd_una + f.adv
        if newly and f.trace is not None:
            f.trace.append((self.e.now, acked))
        if acked >= f.size:
            self._complete(f)
            return
        self._try_send(f)
        w = f.window
        if w is not None and not f.waiting:
            qmax = 0
            for p in f.ports:
                if p.q > qmax:
                    qmax = p.q
            w.note(cca.cwnd, f.snd_nxt - f.snd_una, local - pkt.sent, qmax)
            if w.offer(local, acked) is not None:
                w.close_aux()
                if w.full:
                    self._check_partition(f.rec)

    def _on_timer(self, ev) -> None:
        f = ev.payload
        if type(f) is tuple:
            f = f[0]
            f.pace_ev = None
            self._try_send(f)
            return
        f.rto_ev = None
        if f.finished:
            return
        if f.snd_nxt == f.snd_una:
            return
        local = self.e.now - f.offset
        rto = f.cca.rto()
        idle = local - f.last_progress
        if idle >= rto:
            f.cca.on_timeout()
            f.timeouts += 1
            f.snd_nxt = f.snd_una
            f.last_progress = local
            self._try_send(f)
        else:
            f.rto_ev = self.e.schedule(self.e.now + rto - idle, EventKind.CcaTimer, f, f if self.owned else None)

    # -- reporting ----------------------------------------------------------------------------
    def counters(self) -> dict[str, int]:
        st = self.db.stats() if self.p.mode is Mode.Wormhole else None
        return {
            "events_dispatched": self.e.dispatched,
            "skips": len(self.skips),
            "skip_backs": self.skip_backs,
            "memo_applied": self.memo_applied,
            "memo_hits": st.hits if st else 0,
            "memo_misses": st.misses if st else 0,
            "memo_inserts": st.inserts if st else 0,
            "memo_fallbacks": st.fallbacks if st else 0,
            "memo_entries": st.entries if st else 0,
            "db_bytes": st.bytes if st else 0,
            "drops": self.drops + sum(p.drops for p in self.topo.ports),
            "timeouts": sum(f.timeouts for f in self.flows),
            "packets_sent": sum(f.sent_pkts for f in self.flows),
        }
