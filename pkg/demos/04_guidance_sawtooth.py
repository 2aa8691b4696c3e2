"""
Choosing theta and l for an ECN bottleneck
==========================================

The sawtooth model of ECN window control gives a floor on the threshold
and a window long enough to span two oscillation periods. Below we ask
for the 16-host fat-tree's cross-pod path and then run a four-flow
sawtooth with settings just above that floor.
"""
from __future__ import annotations

import sys

from ffsim import CcaConstants, compare, guidance, run
from ffsim.net import base_rtt, build_fat_tree, route
from ffsim.scenarios import dctcp_sawtooth

sys.setrecursionlimit(20000)   # the shadow check deep-copies the simulator

g = guidance(CcaConstants(8, capacity=1.25), bdp_pkts=1000)
print(f"reference point: theta_min {g.theta_min:.4f}, l_min {g.l_min} samples of one RTT")

topo = build_fat_tree(4)
rtt = base_rtt(route(topo, topo.hosts[0], topo.hosts[15]))
bdp = 1.25 * float(rtt) / 1000
for n in (2, 3, 4):
    gg = guidance(CcaConstants(n, capacity=1.25), float(rtt), 2 * float(rtt))
    print(f"{n} flows, bdp {bdp:.1f} pkts: theta_min {gg.theta_min:.3f}, l_min {gg.l_min} at 2 RTT per sample")

cfg = dctcp_sawtooth(shadow=True)
fast = run(cfg)
base = run(cfg.replace(mode="baseline", shadow=False))
c = compare(base, fast)
bad = sum(not x.ok for x in fast.shadow_checks)
print(f"theta {cfg.theta}: {fast.counters['skips']} skips, bound violations {bad}/{len(fast.shadow_checks)}, "
      f"mean FCT error {c.mean_error:.3%}")
