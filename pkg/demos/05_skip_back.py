"""
An arrival nobody announced
===========================

Two flows are fast-forwarding when a third one arrives. With a
predetermined schedule the skip stops just before the arrival. In
real-time mode the skip overshoots, is pulled back to the arrival
instant, and the flows end identically.
"""
from __future__ import annotations

from ffsim import run
from ffsim.scenarios import mid_steady_arrival

pre = run(mid_steady_arrival(interrupt_mode="Predetermined"))
rt = run(mid_steady_arrival(interrupt_mode="RealTime"))

for fid in pre.fct():
    print(f"{fid:5s} predetermined {pre.fct()[fid]:>9d} ns   real-time {rt.fct()[fid]:>9d} ns")
print("skip-backs in real-time mode:", rt.counters["skip_backs"])
print("identical:", pre.fct() == rt.fct())
