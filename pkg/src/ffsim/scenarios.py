"""Ready-made configurations used by the acceptance suite and the demos."""
from __future__ import annotations

from .runner import RunConfig

MiB = 1 << 20

# Steady detection settings for the telemetry-driven scheme: three samples of
# eight smoothed RTTs each cover the rate controller's settling oscillation.
HPCC_DETECT = dict(theta=0.05, l=3, sample_mult=8.0)


def llm_training(iterations: int = 1, **kw) -> RunConfig:
    """16-host fat-tree, 4 DP rings of 4 ranks (16 MiB per ring) plus 4-stage pipelines."""
    base = dict(
        topology={"kind": "fat_tree", "k": 4},
        workload={"kind": "llm", "dp": 4, "pp": 4, "model_bytes": 64 * MiB, "iterations": iterations},
        cca={"variant": "HpccLike"},
        **HPCC_DETECT,
    )
    base.update(kw)
    return RunConfig(**base)


def periodic_alltoall(repetitions: int = 3, **kw) -> RunConfig:
    """One all-to-all among four hosts in different pods, repeated back to back.

    Every repetition starts from an idle network with the same connections,
    so its transients recur exactly.
    """
    base = dict(
        topology={"kind": "fat_tree", "k": 4},
        workload={"kind": "collectives", "collectives": [
            {"kind": "AllToAll", "participants": [0, 4, 8, 12], "payload": 3 * MiB,
             "repetitions": repetitions, "name": "a2a"},
        ]},
        cca={"variant": "HpccLike"},
        **HPCC_DETECT,
    )
    base.update(kw)
    return RunConfig(**base)


def repetition_of(flow_id: str) -> str:
    """Iteration or repetition tag of a generated flow id (``it1/...`` or ``a2a/r1/...``)."""
    parts = flow_id.split("/")
    if parts[0].startswith("it"):
        return parts[0]
    if len(parts) > 1 and parts[1].startswith("r"):
        return parts[1]
    return ""


# ECN scenarios.  At 10 Gbps with ~17 us cross-pod RTT the bottleneck holds
# about 21 packets, so the closed-form threshold for 3 to 4 flows is near 0.29.
# theta = 0.3 sits just above it and l * interval spans more than 2 T_C.
DCTCP_DETECT = dict(theta=0.3, l=6, sample_mult=2.0)
ECN_TOPOLOGY = {"kind": "fat_tree", "k": 4, "ecn_k": 30_000}


def dctcp_sawtooth(**kw) -> RunConfig:
    """Four staggered ECN-controlled flows into one receiver: a sawtooth bottleneck."""
    flows = [{"id": f"s{i}", "src": i, "dst": 15, "size": 4_000_000, "start": i * 300_000} for i in range(4)]
    base = dict(topology=dict(ECN_TOPOLOGY), workload={"kind": "flows", "flows": flows},
                cca={"variant": "DctcpLike"}, mode="steady-only", **DCTCP_DETECT)
    base.update(kw)
    return RunConfig(**base)


def mid_steady_arrival(**kw) -> RunConfig:
    """Two converged flows into host 15; a third joins at 3.5 ms, inside their steady stretch."""
    flows = [
        {"id": "a", "src": 0, "dst": 15, "size": 8_000_000},
        {"id": "b", "src": 1, "dst": 15, "size": 8_000_000},
        {"id": "late", "src": 4, "dst": 15, "size": 1_000_000, "start": 3_500_000},
    ]
    base = dict(topology={"kind": "fat_tree", "k": 4}, workload={"kind": "flows", "flows": flows},
                cca={"variant": "HpccLike"}, mode="steady-only", **HPCC_DETECT)
    base.update(kw)
    return RunConfig(**base)


# The incast's standing queue sits at aggregation switch a3_0 (node 30); the
# probe 14 -> 13 crosses that switch on a different port, in its own partition.
FREEZE_SWITCH = 30


def incast_with_probe(**kw) -> RunConfig:
    """ECN incast that goes steady while a probe flow shares one of its switches."""
    flows = [
        {"id": "a", "src": 0, "dst": 15, "size": 6_000_000},
        {"id": "b", "src": 1, "dst": 15, "size": 6_000_000},
        {"id": "c", "src": 4, "dst": 15, "size": 6_000_000},
        {"id": "probe", "src": 14, "dst": 13, "size": 2_000_000, "start": 1_000_000},
    ]
    topo = dict(ECN_TOPOLOGY, shared_buffer=400_000)
    base = dict(topology=topo, workload={"kind": "flows", "flows": flows}, cca={"variant": "DctcpLike"},
                mode="steady-only", probe_interval=10_000, **DCTCP_DETECT)
    base.update(kw)
    return RunConfig(**base)


def single_flow(size: int = 20_000_000, **kw) -> RunConfig:
    """One uncontended cross-pod flow."""
    base = dict(topology={"kind": "fat_tree", "k": 4},
                workload={"kind": "flows", "flows": [{"id": "solo", "src": 0, "dst": 15, "size": size}]},
                cca={"variant": "HpccLike"}, **HPCC_DETECT)
    base.update(kw)
    return RunConfig(**base)
