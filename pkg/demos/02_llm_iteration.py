"""
A training iteration on 16 hosts
================================

Four data-parallel rings of four ranks plus four-stage pipelines, under a
telemetry-driven rate controller. The packet-level baseline takes about a
minute on a laptop; the accelerated run a fraction of that.
"""
from __future__ import annotations

import collections

from ffsim import compare, run
from ffsim.scenarios import llm_training

cfg = llm_training(iterations=1)
base = run(cfg.replace(mode="baseline"))
fast = run(cfg)
c = compare(base, fast)

kinds = collections.Counter(fid.split("/")[1] for fid in base.fct())
print("flows per group:", dict(kinds))
print(f"mean FCT error {c.mean_error:.3%}, worst {c.max_error:.3%}")
print(f"skipped-event ratio {c.skipped_ratio:.3f}, event speedup {c.speedup:.2f}x, "
      f"wall speedup {c.wall_speedup:.2f}x")
print(f"skips {fast.counters['skips']}, memo hits {fast.counters['memo_hits']}, "
      f"memo size {fast.counters['db_bytes']} bytes")

# the worst-predicted flows, for inspection
for fid, err in sorted(c.errors.items(), key=lambda kv: -kv[1])[:5]:
    print(f"  {fid:32s} {err:.3%}")
