"""Steady-state detection, skip planning and execution, and error-bound checks."""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from .cca import CcaConstants, Fluctuation, theoretical_fluctuation
from .net import Port, pause_ports, unpause_ports
from .simcore import INF_TIME, Engine


class EmptyOrZeroWindow(ValueError):
    pass


class WindowNotFull(ValueError):
    pass


class NotAllSteady(ValueError):
    pass


class NothingToSkip(ValueError):
    pass


class EndReason(str, Enum):
    FlowCompletes = "FlowCompletes"
    Interrupt = "Interrupt"
    Horizon = "Horizon"


# -- sampling ----------------------------------------------------------------------

class RateWindow:
    """The last ``l`` rate samples of one flow, plus co-sampled metrics.

    Times are in the flow's local clock, so a skipped interval never lands
    inside a sample.
    """

    __slots__ = ("flow", "l", "interval", "samples", "aux", "last_t", "last_acked", "acc")

    def __init__(self, flow: Hashable, l: int, interval: int):
        if l < 2:
            raise ValueError("window length must be >= 2")
        if interval <= 0:
            raise ValueError("sample interval must be positive")
        self.flow = flow
        self.l = l
        self.interval = interval
        self.samples: deque[float] = deque(maxlen=l)
        self.aux: deque[tuple] = deque(maxlen=l)
        self.last_t: int | None = None
        self.last_acked = 0
        self.acc = [0, 0.0, 0.0, 0.0, 0.0]

    @property
    def full(self) -> bool:
        return len(self.samples) == self.l

    def reset(self, now: int | None = None, acked: int = 0, interval: int | None = None) -> None:
        self.samples.clear()
        self.aux.clear()
        self.acc = [0, 0.0, 0.0, 0.0, 0.0]
        self.last_t = now
        self.last_acked = acked
        if interval is not None:
            self.interval = interval

    def note(self, cwnd: float, inflight: float, rtt: float, queue: float) -> None:
        """Accumulate one observation of the co-sampled metrics."""
        a = self.acc
        a[0] += 1
        a[1] += cwnd
        a[2] += inflight
        a[3] += rtt
        a[4] += queue

    def close_aux(self) -> None:
        """Append the per-interval means of the co-sampled metrics."""
        a = self.acc
        n = a[0]
        if n:
            self.aux.append((a[1] / n, a[2] / n, a[3] / n, a[4] / n))
        self.acc = [0, 0.0, 0.0, 0.0, 0.0]

    def offer(self, now: int, acked: int) -> float | None:
        """Take a sample if at least one interval elapsed since the previous one."""
        last = self.last_t
        if last is None:
            self.last_t = now
            self.last_acked = acked
            return None
        dt = now - last
        if dt < self.interval:
            return None
        r = (acked - self.last_acked) / dt
        self.samples.append(r)
        self.last_t = now
        self.last_acked = acked
        return r


def sample_rate(window: RateWindow, acked: int, now: int) -> RateWindow:
    """Append the rate over ``[last sample, now]`` regardless of the interval."""
    if window.last_t is None:
        window.last_t, window.last_acked = now, acked
        return window
    dt = now - window.last_t
    if dt <= 0:
        raise ValueError("sample time must advance")
    window.samples.append((acked - window.last_acked) / dt)
    window.last_t, window.last_acked = now, acked
    return window


@dataclass(frozen=True)
class SteadyVerdict:
    steady: bool
    delta: float     # (max - min) / mean over the window
    rate: float      # window mean, bytes/ns
    timestamp: int = 0


def fluctuation(values: Sequence[float]) -> float:
    if not values:
        raise EmptyOrZeroWindow("empty window")
    mean = math.fsum(values) / len(values)
    if mean <= 0:
        raise EmptyOrZeroWindow("window mean is zero")
    return (max(values) - min(values)) / mean


def check_steady(window: RateWindow | Sequence[float], theta: float, timestamp: int = 0) -> SteadyVerdict:
    if isinstance(window, RateWindow):
        if not window.full:
            raise WindowNotFull(f"{len(window.samples)}/{window.l} samples")
        values = list(window.samples)
    else:
        values = list(window)
    if not values:
        raise EmptyOrZeroWindow("empty window")
    mean = math.fsum(values) / len(values)
    if mean <= 0:
        raise EmptyOrZeroWindow("window mean is zero")
    delta = (max(values) - min(values)) / mean
    return SteadyVerdict(delta < theta, delta, mean, timestamp)


# -- guidance ----------------------------------------------------------------------

@dataclass(frozen=True)
class Guidance:
    theta_min: float
    l_min: int
    t_c_ns: float
    sample_interval: float
    k: float
    model: Fluctuation


def guidance(consts: CcaConstants, rtt: float | None = None, sample_interval: float | None = None, *,
             k: float = 2.0, bdp_pkts: float | None = None) -> Guidance:
    """Smallest sensible threshold and window length for the given bottleneck.

    ``sample_interval`` defaults to one RTT.  Pass ``bdp_pkts`` (with ``rtt``
    in ns or omitted) to work directly in packet units.
    """
    model = theoretical_fluctuation(consts, rtt, bdp_pkts=bdp_pkts)
    rtt_ns = model.t_c_ns / model.t_c
    interval = rtt_ns if sample_interval is None else sample_interval
    if interval <= 0:
        raise ValueError("sample interval must be positive")
    l_min = max(2, math.ceil(k * model.t_c_ns / interval - 1e-12))
    return Guidance(model.eps_relative, l_min, model.t_c_ns, interval, k, model)


# -- planning ------------------------------------------------------------------------

@dataclass
class SteadyPlan:
    pid: Hashable
    now: int
    rates: dict[Hashable, float]
    unsent: dict[Hashable, int]
    completion: dict[Hashable, int]      # absolute projected time unsent reaches zero
    horizon: int
    delta: int
    reason: EndReason
    prefix_time: int = 0                  # memoized transient replayed before the steady part
    prefix_bytes: dict[Hashable, int] = field(default_factory=dict)

    @property
    def resume(self) -> int:
        return self.now + self.delta

    def bytes_at(self, flow: Hashable, d: int) -> int:
        """Bytes credited to ``flow`` after ``d`` ns of the skip."""
        pt = self.prefix_time
        pre = self.prefix_bytes.get(flow, 0)
        if d < pt:
            return pre * d // pt
        rem = self.unsent[flow] - pre
        if self.now + d >= self.completion[flow]:
            return pre + rem
        return pre + min(rem, math.floor(self.rates[flow] * (d - pt)))


def _completion(now: int, rem: int, rate: float) -> int:
    return now + math.ceil(rem / rate)


def plan_steady(pid: Hashable, verdicts: Mapping[Hashable, SteadyVerdict], unsent: Mapping[Hashable, int],
                horizon: int, now: int, *, limit: int | None = None) -> SteadyPlan:
    """Length and per-flow outcome of the skip a steady partition may take."""
    for f, v in verdicts.items():
        if not v.steady or v.rate <= 0:
            raise NotAllSteady(f"flow {f!r} is not steady")
    if not verdicts:
        raise NotAllSteady("empty partition")
    rates = {f: v.rate for f, v in verdicts.items()}
    rem = {f: int(unsent[f]) for f in verdicts}
    comp = {f: _completion(now, rem[f], rates[f]) for f in verdicts}
    return _finish_plan(SteadyPlan(pid, now, rates, rem, comp, horizon, 0, EndReason.FlowCompletes), limit)


def _finish_plan(plan: SteadyPlan, limit: int | None, floor: int = 0) -> SteadyPlan:
    end = min(plan.completion.values())
    reason = EndReason.FlowCompletes
    if plan.horizon < end:
        end, reason = plan.horizon, EndReason.Interrupt
    if limit is not None and plan.now + limit < end:
        end, reason = plan.now + limit, EndReason.Horizon
    end = max(end, plan.now + floor)
    if end <= plan.now:
        raise NothingToSkip(f"partition {plan.pid!r}: horizon at {plan.horizon}, now {plan.now}")
    plan.delta = end - plan.now
    plan.reason = reason
    return plan


def plan_with_prefix(pid: Hashable, rates: Mapping[Hashable, float], unsent: Mapping[Hashable, int],
                     prefix_time: int, prefix_bytes: Mapping[Hashable, int], horizon: int, now: int,
                     *, limit: int | None = None) -> SteadyPlan:
    """Plan a replayed transient of ``prefix_time`` followed by a steady stretch.

    The replayed part ignores the interrupt horizon; an interrupt falling
    inside it is handled by skipping back.
    """
    rates = dict(rates)
    rem = {f: int(unsent[f]) for f in rates}
    comp = {}
    for f, r in rates.items():
        left = rem[f] - prefix_bytes[f]
        if left <= 0:
            raise ValueError(f"flow {f!r}: stored transient exceeds remaining bytes")
        comp[f] = _completion(now + prefix_time, left, r)
    plan = SteadyPlan(pid, now, rates, rem, comp, horizon, 0, EndReason.FlowCompletes,
                      prefix_time, dict(prefix_bytes))
    return _finish_plan(plan, limit, floor=prefix_time)


# -- execution -----------------------------------------------------------------------

@dataclass
class SkipRecord:
    plan: SteadyPlan
    flows: list          # simulator flow objects (attributes: key, offset, adv)
    ports: list[Port]
    a0: dict[Hashable, int]
    applied: dict[Hashable, int]
    resume: int
    memo: bool = False
    skipped_back: bool = False
    frozen_q: dict[int, int] = field(default_factory=dict)

    @property
    def entry(self) -> int:
        return self.plan.now


def execute_skip(engine: Engine, plan: SteadyPlan, flows: Sequence, ports: Sequence[Port],
                 acked: Mapping[Hashable, int], *, memo: bool = False) -> SkipRecord:
    """Freeze a partition and move it ``plan.delta`` into the future.

    Byte counters are credited up front; :func:`skip_back` settles the
    difference if the skip is cut short.
    """
    dT = plan.delta
    pause_ports(ports, plan.resume)
    engine.offset_partition_events(plan.pid, dT)
    applied = {}
    for f in flows:
        f.offset += dT
        b = plan.bytes_at(f.key, dT)
        f.adv += b
        applied[f.key] = b
    for p in ports:
        p.offset += dT
    return SkipRecord(plan, list(flows), list(ports), dict(acked), applied, plan.resume, memo,
                      frozen_q={p.id: p.q for p in ports})


def skip_back(engine: Engine, rec: SkipRecord, target: int) -> None:
    """Cut a skip short so the partition resumes at ``target``."""
    if target == rec.resume:
        return
    engine.skip_back(rec.plan.pid, target)
    back = rec.resume - target
    d = target - rec.entry
    for f in rec.flows:
        b = rec.plan.bytes_at(f.key, d)
        f.adv -= rec.applied[f.key] - b
        rec.applied[f.key] = b
        f.offset -= back
    for p in rec.ports:
        p.offset -= back
        p.resume_at = target
    rec.resume = target
    rec.skipped_back = True


def end_skip(rec: SkipRecord) -> None:
    unpause_ports(rec.ports)


# -- trace and bounds ------------------------------------------------------------------

@dataclass
class SkipSegment:
    """The steady stretch of one flow inside one skip."""
    flow: str
    pid: int
    start: int          # absolute start of the steady stretch
    duration: int       # realized skip length T-hat
    rate: float         # estimated rate R-hat, bytes/ns
    acked_at_start: int
    bytes: int
    reason: str
    memo: bool = False

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def segments(rec: SkipRecord, name_of) -> list[SkipSegment]:
    plan = rec.plan
    start = plan.now + plan.prefix_time
    if rec.resume <= start:
        return []
    out = []
    for f in rec.flows:
        pre = plan.prefix_bytes.get(f.key, 0)
        out.append(SkipSegment(name_of(f.key), int(plan.pid), start, rec.resume - start, plan.rates[f.key],
                               rec.a0[f.key] + pre, rec.applied[f.key] - pre, plan.reason.value, rec.memo))
    return out


def rate_error_bound(theta: float) -> float:
    return theta / (1 - theta)


def duration_error_bound(theta: float) -> float:
    return theta


@dataclass
class ProgressTrace:
    """Cumulative acknowledged bytes of one flow over time."""
    times: np.ndarray
    acked: np.ndarray

    @classmethod
    def from_points(cls, pts: Sequence[tuple[int, int]]) -> "ProgressTrace":
        t = np.fromiter((p[0] for p in pts), dtype=np.float64, count=len(pts))
        a = np.fromiter((p[1] for p in pts), dtype=np.float64, count=len(pts))
        return cls(t, a)

    def time_at(self, acked: float) -> float:
        """Interpolated instant at which progress reaches ``acked`` bytes."""
        return float(np.interp(acked, self.acked, self.times))


@dataclass
class BoundCheck:
    segment: SkipSegment
    realized_rate: float
    realized_duration: float
    rate_error: float
    duration_error: float
    ok: bool


@dataclass
class BoundReport:
    theta: float
    checks: list[BoundCheck]

    @property
    def violations(self) -> list[BoundCheck]:
        return [c for c in self.checks if not c.ok]

    @property
    def max_rate_error(self) -> float:
        return max((c.rate_error for c in self.checks), default=0.0)

    @property
    def max_duration_error(self) -> float:
        return max((c.duration_error for c in self.checks), default=0.0)


def check_segment(s: SkipSegment, trace: ProgressTrace, theta: float) -> BoundCheck | None:
    """Compare one skipped stretch with the same byte range of a packet-level trace.

    A trace that never reaches the end of the range counts as a violation.
    """
    if s.bytes <= 0 or s.duration <= 0:
        return None
    t0 = trace.time_at(s.acked_at_start)
    end = s.acked_at_start + s.bytes
    if end > trace.acked[-1]:
        return BoundCheck(s, 0.0, math.inf, 1.0, math.inf, False)
    real_d = trace.time_at(end) - t0
    if real_d <= 0:
        return None
    real_r = s.bytes / real_d
    re = abs(s.rate - real_r) / real_r
    de = abs(s.duration - real_d) / real_d
    return BoundCheck(s, real_r, real_d, re, de, re < rate_error_bound(theta) and de < duration_error_bound(theta))


def validate_bounds(segs: Iterable[SkipSegment], baseline: Mapping[str, ProgressTrace], theta: float) -> BoundReport:
    """Check every skipped stretch against a full-fidelity run of the same scenario."""
    checks = []
    for s in segs:
        c = check_segment(s, baseline[s.flow], theta)
        if c is not None:
            checks.append(c)
    return BoundReport(theta, checks)


def cofluctuation(aux: Sequence[tuple[float, float, float, float]], capacity: float, base_rtt: float) -> dict[str, float]:
    """Relative spread of (cwnd, inflight, rtt, queue) over a window.

    Queue spread is normalised by one bandwidth-delay product because the
    queue may legitimately sit at zero.
    """
    arr = np.asarray(aux, dtype=np.float64)
    out = {}
    for i, name in enumerate(("cwnd", "inflight", "rtt")):
        col = arr[:, i]
        m = col.mean()
        out[name] = float((col.max() - col.min()) / m) if m > 0 else 0.0
    q = arr[:, 3]
    out["queue"] = float((q.max() - q.min()) / (capacity * base_rtt))
    return out
