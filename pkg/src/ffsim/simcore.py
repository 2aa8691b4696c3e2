"""Deterministic discrete-event engine.

Time is an integer count of nanoseconds. Events are dispatched in
lexicographic ``(timestamp, sequence)`` order; the sequence number is taken
from a global insertion counter, so events sharing a timestamp run FIFO.

Events may name an *owner* (an opaque hashable, typically a flow or a port).
Owners can be grouped under a partition id; the engine can then shift every
pending event of a partition forward in time, and later pull them back
(skip-back) as long as none of them has been dispatched in between.
"""
from __future__ import annotations

import hashlib
import heapq
import itertools
import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Any, Callable, Hashable, Iterable

#: Sentinel for "no known future time".
INF_TIME = 1 << 62


class EventKind(IntEnum):
    PacketDeparture = 0
    PacketArrival = 1
    CcaTimer = 2
    FlowStart = 3
    FlowFinish = 4
    RateSample = 5
    Interrupt = 6
    Control = 7


class SimError(Exception):
    pass


class PastTimestamp(SimError):
    pass


class UnknownPartition(SimError):
    pass


class TooLate(SimError):
    pass


class Event:
    """A scheduled action. The instance doubles as the cancellation handle."""

    __slots__ = ("t", "seq", "kind", "owner", "payload", "ver", "live")

    def __init__(self, t: int, seq: int, kind: int, owner: Hashable | None, payload: Any):
        self.t = t
        self.seq = seq
        self.kind = kind
        self.owner = owner
        self.payload = payload
        self.ver = 0
        self.live = True

    @property
    def timestamp(self) -> int:
        return self.t

    @property
    def sequence(self) -> int:
        return self.seq

    def __repr__(self) -> str:
        return f"Event(t={self.t}, seq={self.seq}, kind={EventKind(self.kind).name}, owner={self.owner!r})"


@dataclass
class RunStats:
    dispatched: int
    clock: int


@dataclass
class _Offset:
    entry: int
    resume: int


class EventQueue:
    """Priority queue of events with a per-owner index of pending events."""

    def __init__(self) -> None:
        self._heap: list[tuple[int, int, int, Event]] = []
        self._by_owner: dict[Hashable, dict[Event, None]] = {}
        self._count = 0

    def __len__(self) -> int:
        return self._count

    def push(self, ev: Event) -> None:
        heapq.heappush(self._heap, (ev.t, ev.seq, ev.ver, ev))
        self._count += 1
        if ev.owner is not None:
            idx = self._by_owner.get(ev.owner)
            if idx is None:
                idx = self._by_owner[ev.owner] = {}
            idx[ev] = None

    def _drop_index(self, ev: Event) -> None:
        if ev.owner is not None:
            idx = self._by_owner.get(ev.owner)
            if idx is not None:
                idx.pop(ev, None)
                if not idx:
                    del self._by_owner[ev.owner]

    def cancel(self, ev: Event) -> bool:
        if not ev.live:
            return False
        ev.live = False
        self._count -= 1
        self._drop_index(ev)
        return True

    def peek_time(self) -> int | None:
        heap = self._heap
        while heap:
            t, _, ver, ev = heap[0]
            if ev.live and ver == ev.ver:
                return t
            heapq.heappop(heap)
        return None

    def pop(self) -> Event | None:
        heap = self._heap
        while heap:
            _, _, ver, ev = heapq.heappop(heap)
            if ev.live and ver == ev.ver:
                ev.live = False
                self._count -= 1
                if ev.owner is not None:
                    self._drop_index(ev)
                return ev
        return None

    def pending(self, owner: Hashable) -> list[Event]:
        return list(self._by_owner.get(owner, ()))

    def move(self, ev: Event, new_t: int) -> None:
        """Re-time a pending event, keeping its sequence number."""
        ev.t = new_t
        ev.ver += 1
        heapq.heappush(self._heap, (new_t, ev.seq, ev.ver, ev))


class Engine:
    """Single-threaded dispatch loop.

    Handlers are registered per :class:`EventKind` and receive the event.
    """

    def __init__(self, *, log_hash: bool = False, keep_log: bool = False) -> None:
        self.now = 0
        self.queue = EventQueue()
        self.dispatched = 0
        self._seq = itertools.count()
        self._urgent = itertools.count(1)
        self._handlers: dict[int, Callable[[Event], None]] = {}
        self._partitions: dict[Hashable, tuple[Hashable, ...]] = {}
        self._offsets: dict[Hashable, _Offset] = {}
        self._hash = hashlib.blake2b(digest_size=16) if log_hash else None
        self.log: list[tuple[int, int, int]] | None = [] if keep_log else None
        self.skip_back_hook: Callable[[Hashable, int, int], None] | None = None

    # -- scheduling -------------------------------------------------------
    def on(self, kind: EventKind, handler: Callable[[Event], None]) -> None:
        self._handlers[int(kind)] = handler

    def schedule(self, t: int, kind: EventKind, payload: Any = None, owner: Hashable | None = None,
                 *, urgent: bool = False) -> Event:
        """Enqueue an event at absolute time ``t``.

        ``urgent`` events draw negative sequence numbers so they precede
        every ordinary event carrying the same timestamp.
        """
        if t < self.now:
            raise PastTimestamp(f"t={t} is before clock {self.now}")
        seq = -next(self._urgent) if urgent else next(self._seq)
        ev = Event(t, seq, int(kind), owner, payload)
        self.queue.push(ev)
        return ev

    def schedule_event(self, ev: Event) -> Event:
        if ev.t < self.now:
            raise PastTimestamp(f"t={ev.t} is before clock {self.now}")
        ev.seq = next(self._seq)
        self.queue.push(ev)
        return ev

    def cancel(self, ev: Event | None) -> bool:
        return ev is not None and self.queue.cancel(ev)

    # -- dispatch -----------------------------------------------------------
    def _dispatch(self, ev: Event) -> None:
        self.now = ev.t
        self.dispatched += 1
        if self._hash is not None:
            self._hash.update(struct.pack("<qqB", ev.t, ev.seq, ev.kind))
        if self.log is not None:
            self.log.append((ev.t, ev.seq, ev.kind))
        handler = self._handlers.get(ev.kind)
        if handler is not None:
            handler(ev)

    def step(self) -> bool:
        ev = self.queue.pop()
        if ev is None:
            return False
        self._dispatch(ev)
        return True

    def run_until(self, limit: int) -> RunStats:
        start = self.dispatched
        q = self.queue
        while True:
            t = q.peek_time()
            if t is None or t > limit:
                break
            self._dispatch(q.pop())
        if limit > self.now:
            self.now = limit
        return RunStats(self.dispatched - start, self.now)

    def run(self) -> RunStats:
        start = self.dispatched
        pop = self.queue.pop
        dispatch = self._dispatch
        while True:
            ev = pop()
            if ev is None:
                break
            dispatch(ev)
        return RunStats(self.dispatched - start, self.now)

    def log_digest(self) -> str | None:
        return None if self._hash is None else self._hash.hexdigest()

    # -- partitions -----------------------------------------------------------
    def register_partition(self, pid: Hashable, owners: Iterable[Hashable]) -> None:
        self._partitions[pid] = tuple(owners)

    def drop_partition(self, pid: Hashable) -> None:
        self._partitions.pop(pid, None)
        self._offsets.pop(pid, None)

    def partition_events(self, pid: Hashable) -> list[Event]:
        try:
            owners = self._partitions[pid]
        except KeyError:
            raise UnknownPartition(pid) from None
        out: list[Event] = []
        for owner in owners:
            out.extend(self.queue.pending(owner))
        return out

    def _shift(self, pid: Hashable, delta: int) -> int:
        events = self.partition_events(pid)
        for ev in events:
            self.queue.move(ev, ev.t + delta)
        return len(events)

    def offset_partition_events(self, pid: Hashable, delta: int) -> int:
        """Push every pending event of ``pid`` later by ``delta`` ns."""
        if pid not in self._partitions:
            raise UnknownPartition(pid)
        if delta <= 0:
            raise ValueError(f"offset must be positive, got {delta}")
        n = self._shift(pid, delta)
        rec = self._offsets.get(pid)
        if rec is None:
            self._offsets[pid] = _Offset(self.now, self.now + delta)
        else:
            rec.resume += delta
        return n

    def resume_time(self, pid: Hashable) -> int | None:
        rec = self._offsets.get(pid)
        return None if rec is None else rec.resume

    def clear_offset(self, pid: Hashable) -> None:
        self._offsets.pop(pid, None)

    def skip_back(self, pid: Hashable, target: int) -> None:
        """Retarget an offset partition to resume at ``target`` instead."""
        if pid not in self._partitions:
            raise UnknownPartition(pid)
        rec = self._offsets.get(pid)
        if rec is None:
            raise SimError(f"partition {pid!r} has no pending offset")
        if target == rec.resume:
            return
        if target > rec.resume:
            raise ValueError("skip_back target lies after the planned resumption")
        if target < self.now or target < rec.entry:
            raise TooLate(f"cannot resume {pid!r} at {target}: clock={self.now}, entry={rec.entry}")
        old = rec.resume
        self._shift(pid, target - old)
        rec.resume = target
        if self.skip_back_hook is not None:
            self.skip_back_hook(pid, old, target)
