from __future__ import annotations

import math
from types import SimpleNamespace

import pytest
from hypothesis import given, settings, strategies as st

from ffsim.cca import CcaConstants
from ffsim.net import Port, gbps
from ffsim.runner import RunConfig, run
from ffsim.simcore import INF_TIME, Engine, EventKind
from ffsim.steady import (EmptyOrZeroWindow, EndReason, NotAllSteady, NothingToSkip, ProgressTrace, RateWindow,
                          SkipSegment, SteadyVerdict, WindowNotFull, check_segment, check_steady, execute_skip,
                          guidance, plan_steady, plan_with_prefix, sample_rate, skip_back)

C = 1.25


def test_fluctuation_of_spread_window():
    v = check_steady([90, 100, 110], theta=0.05)
    assert v.delta == pytest.approx(0.2) and not v.steady and v.rate == pytest.approx(100)


def test_tight_window_is_steady():
    v = check_steady([99, 100, 101], theta=0.05)
    assert v.steady and v.delta == pytest.approx(0.02)


def test_window_errors():
    with pytest.raises(EmptyOrZeroWindow):
        check_steady([], 0.05)
    with pytest.raises(EmptyOrZeroWindow):
        check_steady([0, 0], 0.05)
    w = RateWindow("f", 3, 10)
    with pytest.raises(WindowNotFull):
        check_steady(w, 0.05)


def test_rate_window_samples_over_interval():
    w = RateWindow("f", 3, 100)
    assert w.offer(0, 0) is None
    assert w.offer(50, 10) is None          # under one interval
    assert w.offer(100, 500) == pytest.approx(5.0)
    sample_rate(w, 800, 150)
    assert list(w.samples) == pytest.approx([5.0, 6.0])


def verdict(rate):
    return SteadyVerdict(True, 0.0, rate)


def test_plan_completion_time():
    # 1 MB at 100 B/us = 0.1 B/ns -> 10,000 us
    plan = plan_steady("P", {"f": verdict(0.1)}, {"f": 1_000_000}, INF_TIME, 0)
    assert plan.delta == 10_000_000 and plan.reason is EndReason.FlowCompletes


def test_plan_stops_at_interrupt():
    plan = plan_steady("P", {"f": verdict(0.1)}, {"f": 1_000_000}, 4_000_000, 1_000_000)
    assert plan.delta == 3_000_000 and plan.reason is EndReason.Interrupt


def test_plan_takes_earliest_completion():
    v = {"a": verdict(0.5), "b": verdict(0.25)}
    plan = plan_steady("P", v, {"a": 1000, "b": 1000}, INF_TIME, 0)
    assert plan.delta == min(math.ceil(1000 / 0.5), math.ceil(1000 / 0.25)) == 2000


def test_plan_rejects_unsteady_and_nothing():
    with pytest.raises(NotAllSteady):
        plan_steady("P", {"f": SteadyVerdict(False, 0.3, 1.0)}, {"f": 10}, INF_TIME, 0)
    with pytest.raises(NothingToSkip):
        plan_steady("P", {"f": verdict(1.0)}, {"f": 10}, 5, 5)


def test_guidance_matches_closed_form():
    g = guidance(CcaConstants(8, capacity=C), bdp_pkts=1000)
    assert abs(g.theta_min - math.sqrt(7 * 8 / (16 * 1000))) < 1e-9
    assert g.l_min == math.ceil(2 * g.t_c_ns / g.sample_interval - 1e-12)


def test_guidance_window_of_two_periods():
    base = guidance(CcaConstants(4, capacity=C), rtt=10_000.0)
    g = guidance(CcaConstants(4, capacity=C), rtt=10_000.0, sample_interval=base.t_c_ns)
    assert g.l_min == 2


class FakeFlow(SimpleNamespace):
    pass


def skipped_partition(rate=0.5, unsent=100_000, horizon=INF_TIME):
    e = Engine()
    e.on(EventKind.Control, lambda ev: None)
    e.schedule(100, EventKind.Control, None, "f")
    e.register_partition(7, ["f"])
    f = FakeFlow(key="f", offset=0, adv=0)
    port = Port(0, 0, 1, gbps(10), 1000, 100_000, None, None)
    plan = plan_steady(7, {"f": verdict(rate)}, {"f": unsent}, horizon, 0)
    rec = execute_skip(e, plan, [f], [port], {"f": 0})
    return e, f, port, plan, rec


def test_execute_credits_bytes_and_offsets():
    e, f, port, plan, rec = skipped_partition()
    assert plan.delta == 200_000
    assert f.adv == 100_000 and f.offset == plan.delta and port.offset == plan.delta
    assert port.paused and port.resume_at == plan.delta
    assert [ev.t for ev in e.partition_events(7)] == [100 + plan.delta]


def test_skip_back_settles_bytes():
    e, f, port, plan, rec = skipped_partition()
    skip_back(e, rec, 80_000)
    assert f.adv == math.floor(0.5 * 80_000) and f.offset == 80_000 and port.offset == 80_000
    assert rec.resume == 80_000 and rec.skipped_back
    assert [ev.t for ev in e.partition_events(7)] == [100 + 80_000]


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 2.0), st.integers(1_000, 10**7), st.integers(0, 10**7))
def test_credited_bytes_monotone_and_bounded(rate, unsent, pt):
    prefix = min(unsent - 1, unsent // 3)
    plan = plan_with_prefix(0, {"f": rate}, {"f": unsent}, pt, {"f": prefix}, INF_TIME, 0)
    xs = sorted({0, pt, plan.delta, plan.delta // 2, pt // 2, max(pt - 1, 0)})
    got = [plan.bytes_at("f", d) for d in xs]
    assert got == sorted(got)
    assert plan.bytes_at("f", plan.delta) == unsent
    assert all(0 <= b <= unsent for b in got)


def test_segment_check_against_linear_trace():
    # packet-level trace progressing at exactly 1 B/ns
    trace = ProgressTrace.from_points([(0, 0), (10_000_000, 10_000_000)])
    good = SkipSegment("f", 1, 1000, 1_000_000, 1.02, 1000, 1_000_000, "FlowCompletes")
    bad = SkipSegment("f", 1, 1000, 1_000_000, 1.2, 1000, 1_000_000, "FlowCompletes")
    assert check_segment(good, trace, 0.05).ok
    assert not check_segment(bad, trace, 0.05).ok


def test_single_uncontended_flow_skips_to_completion():
    size = 20_000_000
    wl = {"kind": "flows", "flows": [{"id": "f", "src": 0, "dst": 15, "size": size}]}
    rep = run(RunConfig(topology={"kind": "fat_tree", "k": 4}, workload=wl, mode="steady-only"))
    base = run(RunConfig(topology={"kind": "fat_tree", "k": 4}, workload=wl, mode="baseline"))
    assert rep.counters["skips"] == 1
    fct, ref = rep.fct()["f"], base.fct()["f"]
    assert abs(fct - ref) / ref < 0.05
    assert fct >= size / C
