"""
Replaying a recurring transient
===============================

The same all-to-all runs three times back to back. The first repetition
simulates its start-up transient and stores it keyed by the flow conflict
graph; the later ones find an isomorphic graph and replay it.
"""
from __future__ import annotations

from ffsim import run
from ffsim.scenarios import periodic_alltoall, repetition_of

worm = run(periodic_alltoall(3), keep_sim=True)
steady = run(periodic_alltoall(3, mode="steady-only"))

for t, kind, ids in worm.sim.memo_log:
    print(f"{t / 1e3:9.1f} us  {repetition_of(ids[0])}  {kind:8s} {len(ids)} flows")

print(f"dispatched: steady-only {steady.counters['events_dispatched']}, "
      f"with memo {worm.counters['events_dispatched']}")
