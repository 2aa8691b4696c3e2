from __future__ import annotations

import heapq

import pytest
from hypothesis import given, settings, strategies as st

from ffsim.simcore import Engine, EventKind, PastTimestamp, TooLate, UnknownPartition


def collecting(engine: Engine, kind=EventKind.Control):
    seen = []
    engine.on(kind, lambda ev: seen.append((engine.now, ev.payload)))
    return seen


def test_single_event_round_trip():
    e = Engine()
    ev = e.schedule(0, EventKind.FlowStart, "x")
    assert e.queue.pop() is ev


def test_same_timestamp_is_fifo():
    e = Engine()
    seen = collecting(e)
    e.schedule(5, EventKind.Control, "A")
    e.schedule(5, EventKind.Control, "B")
    e.run()
    assert [p for _, p in seen] == ["A", "B"]


def test_schedule_in_the_past_rejected():
    e = Engine()
    e.run_until(7)
    with pytest.raises(PastTimestamp):
        e.schedule(3, EventKind.Control)


def test_run_until_empty_advances_clock():
    e = Engine()
    st_ = e.run_until(10)
    assert (st_.dispatched, st_.clock) == (0, 10)


def test_run_until_stops_at_limit():
    e = Engine()
    collecting(e)
    for t in (1, 2, 3):
        e.schedule(t, EventKind.Control, t)
    assert e.run_until(2).dispatched == 2


def test_urgent_precedes_same_timestamp():
    e = Engine()
    seen = collecting(e)
    e.schedule(4, EventKind.Control, "normal")
    e.schedule(4, EventKind.Control, "urgent", urgent=True)
    e.run()
    assert [p for _, p in seen] == ["urgent", "normal"]


def test_cancel():
    e = Engine()
    seen = collecting(e)
    a = e.schedule(1, EventKind.Control, "a")
    e.schedule(2, EventKind.Control, "b")
    assert e.cancel(a) and not e.cancel(a)
    e.run()
    assert [p for _, p in seen] == ["b"]


def partitioned(times_by_owner):
    e = Engine()
    seen = collecting(e)
    for owner, ts in times_by_owner.items():
        for t in ts:
            e.schedule(t, EventKind.Control, (owner, t), owner)
    e.register_partition("P", ["x"])
    return e, seen


def test_offset_single_event():
    e, seen = partitioned({"x": [500]})
    assert e.offset_partition_events("P", 1000) == 1
    e.run()
    assert seen == [(1500, ("x", 500))]


def test_offset_keeps_relative_order_and_spares_others():
    e, seen = partitioned({"x": [500, 600], "y": [550]})
    e.offset_partition_events("P", 1000)
    e.run()
    assert seen == [(550, ("y", 550)), (1500, ("x", 500)), (1600, ("x", 600))]


def test_offset_zero_rejected():
    e, _ = partitioned({"x": [1]})
    with pytest.raises(ValueError):
        e.offset_partition_events("P", 0)


def test_offset_unknown_partition():
    e = Engine()
    with pytest.raises(UnknownPartition):
        e.offset_partition_events("nope", 5)


def test_skip_back_to_resume_is_noop():
    e, seen = partitioned({"x": [100]})
    e.offset_partition_events("P", 900)
    e.skip_back("P", 900)
    e.run()
    assert seen == [(1000, ("x", 100))]


def test_skip_back_moves_partition_only():
    e, seen = partitioned({"x": [100], "y": [300]})
    e.offset_partition_events("P", 900)      # x now at 1000, resume at 900
    e.run_until(300)
    e.skip_back("P", 400)                      # pull back by 500
    e.run()
    assert seen == [(300, ("y", 300)), (500, ("x", 100))]


def test_skip_back_before_clock_is_too_late():
    e, _ = partitioned({"x": [100], "y": [700]})
    e.offset_partition_events("P", 900)
    e.run_until(700)
    with pytest.raises(TooLate):
        e.skip_back("P", 600)


def test_log_hash_deterministic():
    def once():
        e = Engine(log_hash=True)
        collecting(e)
        for t in (3, 1, 2, 2):
            e.schedule(t, EventKind.Control)
        e.run()
        return e.log_digest()

    assert once() == once()


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 1000), min_size=1, max_size=60))
def test_dispatch_order_matches_sorted_oracle(times):
    e = Engine()
    out = []
    e.on(EventKind.Control, lambda ev: out.append((ev.t, ev.payload)))
    for i, t in enumerate(times):
        e.schedule(t, EventKind.Control, i)
    e.run()
    heap = [(t, i) for i, t in enumerate(times)]
    heapq.heapify(heap)
    assert out == [heapq.heappop(heap) for _ in times]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 500), min_size=1, max_size=30), st.integers(1, 2000), st.integers(0, 400))
def test_offset_soundness_and_monotone_clock(times, delta, run_to):
    e = Engine()
    clock = []
    e.on(EventKind.Control, lambda ev: clock.append(e.now))
    for t in times:
        e.schedule(t, EventKind.Control, None, "x")
    e.schedule(250, EventKind.Control, None, "other")
    e.register_partition("P", ["x"])
    e.run_until(run_to)
    pending = [ev.t for ev in e.partition_events("P")]
    if not pending:
        return
    low = min(pending)
    e.offset_partition_events("P", delta)
    assert min(ev.t for ev in e.partition_events("P")) >= low + delta
    e.skip_back("P", e.now + (e.resume_time("P") - e.now) // 2)
    e.run()
    assert clock == sorted(clock)
