"""Acceptance criteria 1-12 at their stated tolerances.

Expensive runs are cached per session and shared between criteria. Each
criterion records one PASS/FAIL line, repeated in the terminal summary.
"""
from __future__ import annotations

import functools
import random
import sys

import pytest

from ffsim.cca import CcaConstants
from ffsim.net import build_fat_tree, build_rail_optimized, build_two_tier, route
from ffsim.partition import IncrementalPartitioner, partition_full
from ffsim.runner import compare, emit_reports, run
from ffsim.scenarios import (FREEZE_SWITCH, dctcp_sawtooth, incast_with_probe, llm_training, mid_steady_arrival,
                             periodic_alltoall, repetition_of)
from ffsim.steady import guidance, validate_bounds

from test_partition import uf_oracle

sys.setrecursionlimit(20000)   # the shadow fork deep-copies the simulator

THETA = 0.05


@functools.lru_cache(maxsize=None)
def base(iterations: int):
    return run(llm_training(iterations, mode="baseline", record_progress=True))


@functools.lru_cache(maxsize=None)
def worm(iterations: int, shadow: bool = False):
    return run(llm_training(iterations, mode="wormhole", shadow=shadow))


@functools.lru_cache(maxsize=None)
def steady_only(iterations: int):
    return run(llm_training(iterations, mode="steady-only"))


@functools.lru_cache(maxsize=None)
def sawtooth():
    cfg = dctcp_sawtooth()
    return cfg, run(cfg.replace(shadow=True)), run(cfg.replace(mode="baseline", record_progress=True))


# -- 1, 2, 3: accuracy and work saved ------------------------------------------------------

def test_c01_fct_accuracy(criterion):
    b, w = base(1), worm(1)
    c = compare(b, w)
    pair = b.wall_seconds + w.wall_seconds
    ok = c.mean_error < 0.02 and pair < 600
    criterion(1, ok, f"mean FCT error {c.mean_error:.4%} (< 2%), max {c.max_error:.4%}, pair runtime {pair:.1f}s"
                    f" (< 600s), {len(b.flows)} flows")
    assert ok


def test_c02_skipped_event_ratio(criterion):
    c = compare(base(1), worm(1))
    ok = c.skipped_ratio > 0.90
    criterion(2, ok, f"skipped-event ratio {c.skipped_ratio:.4f} (> 0.90); "
                     f"dispatched {base(1).counters['events_dispatched']} -> {worm(1).counters['events_dispatched']}")
    assert ok


def test_c03_event_speedup_two_iterations(criterion):
    b, w = base(2), worm(2, shadow=True)
    c = compare(b, w)
    ok = c.speedup >= 10
    criterion(3, ok, f"event-count speedup {c.speedup:.2f} (>= 10), mean FCT error {c.mean_error:.4%}, "
                     f"skipped ratio {c.skipped_ratio:.4f}")
    assert ok


def test_steady_only_no_less_accurate_than_wormhole(criterion):
    b = base(1)
    es, ew = compare(b, steady_only(1)).mean_error, compare(b, worm(1)).mean_error
    ok = es <= ew
    criterion("ablation", ok, f"steady-only mean error {es:.4%} <= wormhole {ew:.4%}")
    assert ok


# -- 4: rate and duration bounds on every skip ------------------------------------------------

def test_c04_bound_suite(criterion):
    rows = []
    shadow_checks = []
    cfg_s, saw_s, saw_b = sawtooth()
    runs = [("scenario 1", worm(1, shadow=True), base(1), THETA),
            ("scenario 2", worm(2, shadow=True), base(2), THETA),
            ("sawtooth", saw_s, saw_b, cfg_s.theta)]
    for name, acc, ref, theta in runs:
        paired = validate_bounds(acc.segments, ref.traces, theta)
        bad = sum(not c.ok for c in acc.shadow_checks)
        shadow_checks += acc.shadow_checks
        rows.append(f"{name}: shadow {bad}/{len(acc.shadow_checks)} violations "
                    f"(paired baseline {len(paired.violations)}/{len(paired.checks)})")
    bad = [c for c in shadow_checks if not c.ok]
    ok = bool(shadow_checks) and not bad
    worst = max(shadow_checks, key=lambda c: c.rate_error / (THETA / (1 - THETA)), default=None)
    detail = "; ".join(rows)
    if worst is not None:
        detail += f"; worst rate error {worst.rate_error:.4f}, duration error {worst.duration_error:.4f}"
    criterion(4, ok, detail)
    assert ok


# -- 5: co-stability -------------------------------------------------------------------------

def test_c05_costability(criterion):
    cs = worm(1).costability
    limit = 3 * THETA
    bad = [c for c in cs if max(c.metrics.values()) >= limit]
    worst = {k: max(c.metrics[k] for c in cs) for k in ("queue", "inflight", "cwnd", "rtt")} if cs else {}
    ok = bool(cs) and not bad
    criterion(5, ok, f"{len(bad)}/{len(cs)} flagged-steady windows exceed 3*theta={limit:.2f}; worst "
                     + ", ".join(f"{k} {v:.3f}" for k, v in worst.items()))
    assert ok


# -- 6: partitioner oracle ------------------------------------------------------------------------

def random_topology(rng):
    pick = rng.randrange(3)
    if pick == 0:
        return build_fat_tree(rng.choice([2, 4, 6]))
    if pick == 1:
        return build_two_tier(rng.randint(1, 6), rng.randint(2, 6), rng.randint(1, 4))
    return build_rail_optimized(rng.randint(2, 4), rng.randint(2, 4), rng.randint(1, 3))


def random_routes(rng, topo, n):
    hosts = topo.hosts
    out = {}
    for i in range(n):
        a, b = rng.sample(hosts, 2)
        out[i] = route(topo, a, b, sport=rng.randrange(1 << 16)).ids
    return out


def test_c06_partitioner_oracle(criterion):
    rng = random.Random(2024)
    full_bad = 0
    for _ in range(1000):
        topo = random_topology(rng)
        routes = random_routes(rng, topo, rng.randint(1, 40))
        if {p.flow_set() for p in partition_full(routes)} != uf_oracle(routes):
            full_bad += 1
    inc_bad = 0
    steps = 0
    for _ in range(500):
        topo = random_topology(rng)
        pool = random_routes(rng, topo, 40)
        p = IncrementalPartitioner()
        live = {}
        for _ in range(rng.randint(5, 60)):
            if live and rng.random() < 0.45:
                f = rng.choice(sorted(live))
                p.leave(f)
                del live[f]
            else:
                f = rng.choice([k for k in pool if k not in live] or [None])
                if f is None:
                    continue
                live[f] = pool[f]
                p.enter(f, live[f])
            p.check()
            steps += 1
            if {fs for fs, _ in p.snapshot()} != {pt.flow_set() for pt in partition_full(live)}:
                inc_bad += 1
    ok = full_bad == 0 and inc_bad == 0
    criterion(6, ok, f"full vs union-find: {full_bad}/1000 mismatches; incremental vs full: {inc_bad}/{steps} steps")
    assert ok


# -- 7, 8: memoization ---------------------------------------------------------------------------

def test_c07_memo_hits_on_repetition(criterion):
    w = run(periodic_alltoall(3, mode="wormhole"), keep_sim=True)
    s = run(periodic_alltoall(3, mode="steady-only"))
    by_rep: dict[str, dict[str, int]] = {}
    for _, kind, ids in w.sim.memo_log:
        rep = repetition_of(ids[0])
        by_rep.setdefault(rep, {}).setdefault(kind, 0)
        by_rep[rep][kind] += 1
    later = [by_rep.get(r, {}) for r in ("r1", "r2")]
    all_hits = all(d.get("hit", 0) > 0 and not d.get("miss") and not d.get("fallback") for d in later)
    no_inserts = all(not d.get("insert") for d in later)
    dw, ds = w.counters["events_dispatched"], s.counters["events_dispatched"]
    ok = all_hits and no_inserts and dw <= ds
    criterion(7, ok, f"per repetition {dict(sorted(by_rep.items()))}; dispatched wormhole {dw} <= steady-only {ds}")
    assert ok


def test_c08_memo_db_size(criterion):
    nbytes = worm(1).counters["db_bytes"]
    ok = nbytes < 100_000
    criterion(8, ok, f"db {nbytes} bytes (< 100000), {worm(1).counters['memo_entries']} entries")
    assert ok


# -- 9, 10: skip-back and freezing ------------------------------------------------------------------

@pytest.mark.parametrize("mode", ["steady-only", "wormhole"])
def test_c09_skip_back_equivalence(criterion, mode):
    pre = run(mid_steady_arrival(mode=mode, interrupt_mode="Predetermined"))
    rt = run(mid_steady_arrival(mode=mode, interrupt_mode="RealTime"))
    same = pre.fct() == rt.fct()
    ok = same and rt.counters["skip_backs"] >= 1
    criterion(9, ok, f"{mode}: FCTs identical={same}, skip-backs {rt.counters['skip_backs']}", merge=True)
    assert ok


def test_c10_pause_freeze(criterion):
    w = run(incast_with_probe(), keep_sim=True)
    sim = w.sim
    probe = sim.by_id["probe"]
    incast = next(sk for sk in sim.skips if any(sim.flows[k].spec.id == "a" for k in sk.plan.rates))
    frozen_here = sum(q for pid, q in incast.frozen_q.items() if sim.topo.ports[pid].node == FREEZE_SWITCH)
    seen = [x for x in sim.pool_samples if x[1] == FREEZE_SWITCH and probe.start_t <= x[0] <= probe.finish_t
            and incast.plan.now <= x[0] < incast.resume]
    accounting = all(used == paused + active for _, _, used, paused, active in sim.pool_samples)
    reflects = bool(seen) and frozen_here > 0 and all(paused == frozen_here and used >= frozen_here
                                                       for _, _, used, paused, _ in seen)
    ok = sim.freeze_checks > 0 and sim.freeze_violations == 0 and accounting and reflects
    criterion(10, ok, f"{sim.freeze_violations}/{sim.freeze_checks} frozen-queue samples changed; switch "
                      f"{FREEZE_SWITCH} pool holds {frozen_here} frozen bytes in {len(seen)} samples during the probe")
    assert ok


# -- 11, 12 ---------------------------------------------------------------------------------------

@pytest.mark.parametrize("mode", ["baseline", "steady-only", "wormhole"])
def test_c11_determinism(criterion, mode, tmp_path):
    a = run(periodic_alltoall(2, mode=mode))
    b = run(periodic_alltoall(2, mode=mode))
    emit_reports(a, tmp_path / "a")
    emit_reports(b, tmp_path / "b")
    same = (tmp_path / "a/fct.csv").read_bytes() == (tmp_path / "b/fct.csv").read_bytes()
    ok = same and a.log_digest is not None and a.log_digest == b.log_digest
    criterion(11, ok, f"{mode}: fct.csv identical={same}, log hash {a.log_digest[:12]}", merge=True)
    assert ok


def test_c12_guidance(criterion):
    g = guidance(CcaConstants(8, capacity=1.25), bdp_pkts=1000)
    closed = (7 * 8 / (16 * 1000)) ** 0.5
    l_expected = max(2, -(-2 * g.t_c_ns // g.sample_interval))
    ok = abs(g.theta_min - closed) < 1e-9 and abs(g.theta_min - 0.0592) < 1e-4 and g.l_min == l_expected
    ok = ok and g.l_min * g.sample_interval >= 2 * g.t_c_ns
    criterion(12, ok, f"theta_min {g.theta_min:.10f} vs {closed:.10f}; l_min {g.l_min} covers "
                      f"{g.l_min * g.sample_interval / g.t_c_ns:.2f} T_C (k=2)")
    assert ok
