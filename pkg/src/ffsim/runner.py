"""Run configuration, paired-run comparison and report files."""
from __future__ import annotations

import csv
import dataclasses
import io
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .cca import CcaParams, Variant
from .memo import MemoDb
from .net import Topology, build_fat_tree, build_rail_optimized, build_two_tier, gbps, load_topology, topology_from_dict
from .sim import CoStability, FlowResult, Mode, SimParams, Simulator
from .steady import BoundCheck, ProgressTrace, SkipSegment
from .workload import (CollectiveSpec, FlowSpec, InterruptMode, InvalidSpec, ParallelConfig, PlacementInfeasible,
                       expand_schedule, generate_llm_iteration, load_schedule)

try:  # Python 3.11+
    import tomllib as _toml
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as _toml

OUTPUT_ENV = "FFSIM_OUTPUT_DIR"


class ConfigError(ValueError):
    """Invalid run configuration; ``problems`` lists ``(field, message)`` pairs."""

    def __init__(self, problems: list[tuple[str, str]]):
        self.problems = problems
        super().__init__("; ".join(f"{k}: {v}" for k, v in problems))


class FlowSetMismatch(ValueError):
    pass


@dataclass
class RunConfig:
    topology: dict = field(default_factory=lambda: {"kind": "fat_tree", "k": 4})
    workload: dict = field(default_factory=dict)
    cca: dict = field(default_factory=lambda: {"variant": "HpccLike"})
    theta: float = 0.05
    l: int = 8
    sample_interval: Any = "rtt"      # "rtt" or a fixed interval in ns
    sample_mult: float = 1.0
    eps_match: float = 0.01
    mode: str = "wormhole"
    interrupt_mode: str = "Predetermined"
    seed: int = 0
    output_dir: str | None = None
    include_ack_ports: bool = False
    max_skip: int | None = None
    log_hash: bool = True
    record_progress: bool = False
    memo_file: str | None = None
    probe_interval: int | None = None  # ns between samples of frozen queues and shared pools
    shadow: bool = False              # replay each skip packet-level to measure its realized rate

    def validate(self) -> None:
        bad: list[tuple[str, str]] = []
        if not isinstance(self.theta, (int, float)) or not 0 < self.theta < 1:
            bad.append(("theta", f"must lie in (0, 1), got {self.theta!r}"))
        if not isinstance(self.l, int) or self.l < 2:
            bad.append(("l", f"must be an integer >= 2, got {self.l!r}"))
        if self.mode not in {m.value for m in Mode}:
            bad.append(("mode", f"one of {[m.value for m in Mode]}, got {self.mode!r}"))
        if self.interrupt_mode not in {m.value for m in InterruptMode}:
            bad.append(("interrupt_mode", f"one of {[m.value for m in InterruptMode]}, got {self.interrupt_mode!r}"))
        si = self.sample_interval
        if not (si == "rtt" or (isinstance(si, int) and not isinstance(si, bool) and si > 0)):
            bad.append(("sample_interval", f"'rtt' or a positive integer of ns, got {si!r}"))
        if not isinstance(self.sample_mult, (int, float)) or self.sample_mult <= 0:
            bad.append(("sample_mult", "must be positive"))
        if not isinstance(self.eps_match, (int, float)) or not 0 < self.eps_match < 1:
            bad.append(("eps_match", "must lie in (0, 1)"))
        if not isinstance(self.seed, int):
            bad.append(("seed", "must be an integer"))
        if self.max_skip is not None and (not isinstance(self.max_skip, int) or self.max_skip <= 0):
            bad.append(("max_skip", "must be a positive integer of ns"))
        if self.probe_interval is not None and (not isinstance(self.probe_interval, int) or self.probe_interval <= 0):
            bad.append(("probe_interval", "must be a positive integer of ns"))
        cca = dict(self.cca)
        try:
            CcaParams(**cca)
        except TypeError as e:
            bad.append(("cca", str(e)))
        except ValueError as e:
            bad.append(("cca", str(e)))
        if not isinstance(self.topology, Mapping):
            bad.append(("topology", "must be a table"))
        if not isinstance(self.workload, Mapping) or not self.workload:
            bad.append(("workload", "must be a non-empty table"))
        if bad:
            raise ConfigError(bad)

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - names)
        if unknown:
            raise ConfigError([(k, "unknown field") for k in unknown])
        cfg = cls(**dict(doc))
        cfg.validate()
        return cfg

    @classmethod
    def from_toml(cls, path: str | Path) -> "RunConfig":
        return cls.from_dict(load_toml(path))

    def sim_params(self) -> SimParams:
        return SimParams(
            mode=Mode(self.mode), interrupt_mode=InterruptMode(self.interrupt_mode), theta=float(self.theta),
            l=self.l, sample_mult=float(self.sample_mult),
            sample_interval=None if self.sample_interval == "rtt" else int(self.sample_interval),
            eps_match=float(self.eps_match), include_ack_ports=self.include_ack_ports,
            cca=CcaParams(**self.cca), seed=self.seed, max_skip=self.max_skip,
            record_progress=self.record_progress, log_hash=self.log_hash, shadow=self.shadow,
            probe_interval=self.probe_interval,
        )


def load_toml(path: str | Path) -> dict[str, Any]:
    """Parse a TOML run configuration without validating it."""
    try:
        with open(path, "rb") as fh:
            return _toml.load(fh)
    except _toml.TOMLDecodeError as e:
        raise ConfigError([("config", f"{path}: {e}")]) from None


# -- builders -------------------------------------------------------------------------

def build_topology(spec: Mapping[str, Any]) -> Topology:
    spec = dict(spec)
    if "file" in spec:
        return load_topology(spec["file"])
    if "nodes" in spec:
        return topology_from_dict(spec)
    kind = spec.pop("kind", "fat_tree")
    bw = gbps(spec.pop("gbps", 10))
    delay = int(spec.pop("delay_ns", 1000))
    buf = {k: spec.pop(k) for k in ("port_cap", "shared_buffer", "ecn_k") if k in spec}
    try:
        if kind == "fat_tree":
            return build_fat_tree(int(spec.pop("k", 4)), bw, delay, **buf)
        if kind == "two_tier":
            return build_two_tier(int(spec.pop("tors")), int(spec.pop("hosts_per_tor")), int(spec.pop("spines")),
                                  bw, delay, **buf)
        if kind == "rail":
            return build_rail_optimized(int(spec.pop("servers")), int(spec.pop("rails")), int(spec.pop("spines")),
                                        bw, delay, **buf)
    except KeyError as e:
        raise ConfigError([("topology", f"missing {e.args[0]!r}")]) from None
    raise ConfigError([("topology.kind", f"unknown topology kind {kind!r}")])


def _collective(d: Mapping[str, Any]) -> CollectiveSpec:
    d = dict(d)
    d["participants"] = tuple(d["participants"])
    d["after"] = tuple(d.get("after", ()))
    return CollectiveSpec(**d)


def build_workload(spec: Mapping[str, Any], topo: Topology) -> list[FlowSpec]:
    spec = dict(spec)
    try:
        if "schedule" in spec:
            return load_schedule(spec["schedule"])
        kind = spec.pop("kind", "llm")
        if kind == "llm":
            pc = ParallelConfig(**spec)
            hosts = list(range(len(topo.hosts)))
            return expand_schedule(generate_llm_iteration(pc, hosts))
        if kind == "collectives":
            return expand_schedule([_collective(c) for c in spec["collectives"]])
        if kind == "flows":
            return [FlowSpec(**{**f, "deps": tuple(f.get("deps", ()))}) for f in spec["flows"]]
    except (InvalidSpec, PlacementInfeasible, TypeError, KeyError) as e:
        raise ConfigError([("workload", str(e))]) from None
    raise ConfigError([("workload.kind", f"unknown workload kind {kind!r}")])


# -- run ---------------------------------------------------------------------------------

@dataclass
class RunReport:
    mode: str
    flows: list[FlowResult]
    counters: dict[str, int]
    wall_seconds: float
    log_digest: str | None = None
    segments: list[SkipSegment] = field(default_factory=list)
    costability: list[CoStability] = field(default_factory=list)
    traces: dict[str, ProgressTrace] = field(default_factory=dict)
    shadow_checks: list[BoundCheck] = field(default_factory=list)
    sim: Simulator | None = field(default=None, repr=False)

    def fct(self) -> dict[str, int]:
        return {r.id: r.fct for r in self.flows}


def run(cfg: RunConfig, *, db: MemoDb | None = None, keep_sim: bool = False,
        flows: list[FlowSpec] | None = None, setup=None) -> RunReport:
    """Simulate one configuration.  ``setup`` may adjust the simulator before it runs."""
    cfg.validate()
    topo = build_topology(cfg.topology)
    specs = flows if flows is not None else build_workload(cfg.workload, topo)
    params = cfg.sim_params()
    if db is None and cfg.memo_file and Path(cfg.memo_file).exists():
        db = MemoDb.load(cfg.memo_file, cfg.eps_match)
    try:
        sim = Simulator(topo, specs, params, db=db)
    except ValueError as e:
        raise ConfigError([("workload", str(e))]) from None
    if setup is not None:
        setup(sim)
    t0 = time.perf_counter()
    sim.run()
    wall = time.perf_counter() - t0
    if cfg.memo_file and params.mode is Mode.Wormhole:
        sim.db.save(cfg.memo_file)
    traces = {}
    if params.record_progress:
        traces = {f.spec.id: ProgressTrace.from_points(f.trace) for f in sim.flows}
    return RunReport(cfg.mode, sim.results(), sim.counters(), wall, sim.e.log_digest(), list(sim.segments),
                     list(sim.costability), traces, list(sim.shadow_checks), sim if keep_sim else None)


@dataclass
class Comparison:
    errors: dict[str, float]
    mean_error: float
    max_error: float
    skipped_ratio: float
    speedup: float
    wall_speedup: float


def compare(base: RunReport, acc: RunReport) -> Comparison:
    b, a = base.fct(), acc.fct()
    if set(b) != set(a):
        missing = sorted(set(b) ^ set(a))
        raise FlowSetMismatch(f"flow sets differ, e.g. {missing[:3]}")
    ids = list(b)
    err = np.array([abs(a[i] - b[i]) / b[i] for i in ids], dtype=np.float64)
    nb = base.counters["events_dispatched"]
    na = acc.counters["events_dispatched"]
    return Comparison(
        errors=dict(zip(ids, err.tolist())),
        mean_error=float(err.mean()) if len(err) else 0.0,
        max_error=float(err.max()) if len(err) else 0.0,
        skipped_ratio=(nb - na) / nb if nb else 0.0,
        speedup=nb / na if na else float("inf"),
        wall_speedup=base.wall_seconds / acc.wall_seconds if acc.wall_seconds > 0 else float("inf"),
    )


# -- reports ---------------------------------------------------------------------------------

FCT_COLUMNS = ("id", "size", "start", "finish", "fct")


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def fct_csv(report: RunReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FCT_COLUMNS)
    for r in report.flows:
        w.writerow([r.id, r.size, r.start, r.finish, r.fct])
    return buf.getvalue()


def counters_csv(report: RunReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("counter", "value"))
    for k, v in report.counters.items():
        w.writerow((k, v))
    return buf.getvalue()


def summary_text(report: RunReport, comparison: Comparison | None = None) -> str:
    lines = [f"mode: {report.mode}", f"flows: {len(report.flows)}"]
    lines += [f"{k}: {v}" for k, v in report.counters.items()]
    if report.log_digest:
        lines.append(f"dispatch_log_blake2b: {report.log_digest}")
    if report.shadow_checks:
        lines.append(f"shadow_checks: {len(report.shadow_checks)}")
        lines.append(f"shadow_violations: {sum(not c.ok for c in report.shadow_checks)}")
    lines.append(f"wall_seconds: {report.wall_seconds:.3f}")
    if comparison is not None:
        lines += [
            "comparison:",
            f"  mean_fct_error: {comparison.mean_error:.6f}",
            f"  max_fct_error: {comparison.max_error:.6f}",
            f"  skipped_event_ratio: {comparison.skipped_ratio:.6f}",
            f"  event_speedup: {comparison.speedup:.3f}",
            f"  wall_speedup: {comparison.wall_speedup:.3f}",
        ]
    return "\n".join(lines) + "\n"


def emit_reports(report: RunReport, outdir: str | Path, comparison: Comparison | None = None) -> list[Path]:
    """Write fct.csv, counters.csv, skips.jsonl and summary.txt, each atomically."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "fct.csv": fct_csv(report),
        "counters.csv": counters_csv(report),
        "skips.jsonl": "".join(s.to_json() + "\n" for s in report.segments),
        "summary.txt": summary_text(report, comparison),
    }
    paths = []
    for name, text in files.items():
        p = out / name
        _atomic_write(p, text)
        paths.append(p)
    return paths


def read_fct_csv(path: str | Path) -> list[FlowResult]:
    with open(path, newline="") as fh:
        rows = csv.DictReader(fh)
        return [FlowResult(r["id"], int(r["size"]), int(r["start"]), int(r["finish"])) for r in rows]


def read_report_dir(path: str | Path) -> RunReport:
    p = Path(path)
    flows = read_fct_csv(p / "fct.csv")
    counters = {}
    with open(p / "counters.csv", newline="") as fh:
        for r in csv.DictReader(fh):
            counters[r["counter"]] = int(r["value"])
    mode = "unknown"
    wall = 0.0
    summ = p / "summary.txt"
    if summ.exists():
        for line in summ.read_text().splitlines():
            if line.startswith("mode: "):
                mode = line[6:]
            elif line.startswith("wall_seconds: "):
                wall = float(line.split(": ", 1)[1])
    return RunReport(mode, flows, counters, wall)
