"""
One flow, one skip
==================

A single uncontended flow crosses the fat-tree. Its rate settles within a
few RTTs, the detector flags it steady, and the rest of the flow is
covered by one fast-forward.
"""
from __future__ import annotations

from ffsim import compare, run
from ffsim.scenarios import single_flow

cfg = single_flow()
fast = run(cfg)
slow = run(cfg.replace(mode="baseline"))

# one skip moved most of the bytes
seg = fast.segments[0]
print(f"skip started at {seg.start / 1e3:.1f} us, lasted {seg.duration / 1e3:.1f} us, moved {seg.bytes} bytes")
print(f"estimated rate {seg.rate * 8:.3f} Gbps")

c = compare(slow, fast)
print(f"FCT {fast.fct()['solo'] / 1e3:.1f} us vs {slow.fct()['solo'] / 1e3:.1f} us packet-level "
      f"(error {c.mean_error:.3%})")
print(f"events {slow.counters['events_dispatched']} -> {fast.counters['events_dispatched']} "
      f"({c.speedup:.1f}x fewer)")
