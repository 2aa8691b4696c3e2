"""Packet-level network simulation with steady-state fast-forwarding.

Flows are grouped into partitions of mutually contending flows. Once every
flow in a partition holds a steady rate, the partition's packet events are
skipped ahead in one step; transients seen before are replayed from a
memo keyed by the flow conflict graph.
"""
from __future__ import annotations

from .cca import CcaConstants, CcaParams, GuidanceInapplicable, Variant, theoretical_fluctuation
from .memo import FlowConflictGraph, MemoDb, build_fcg, find_isomorphism
from .net import Topology, build_fat_tree, build_rail_optimized, build_two_tier, gbps, route
from .partition import IncrementalPartitioner, partition_full
from .runner import (ConfigError, FlowSetMismatch, RunConfig, RunReport, compare, emit_reports, read_report_dir,
                     run)
from .sim import Mode, SimParams, Simulator
from .simcore import Engine, EventKind
from .steady import check_steady, guidance
from .workload import CollectiveSpec, FlowSpec, ParallelConfig, expand_collective

__all__ = [
    "CcaConstants", "CcaParams", "CollectiveSpec", "ConfigError", "Engine", "EventKind", "FlowConflictGraph",
    "FlowSetMismatch", "FlowSpec", "GuidanceInapplicable", "IncrementalPartitioner", "MemoDb", "Mode",
    "ParallelConfig", "RunConfig", "RunReport", "SimParams", "Simulator", "Topology", "Variant", "build_fat_tree",
    "build_fcg", "build_rail_optimized", "build_two_tier", "check_steady", "compare", "emit_reports",
    "expand_collective", "find_isomorphism", "gbps", "guidance", "partition_full", "read_report_dir", "route", "run",
    "theoretical_fluctuation",
]

__version__ = "0.1.0"
