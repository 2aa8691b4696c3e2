"""Command line: ``ffsim run | compare | guidance``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path
from typing import Any, Sequence

from .cca import CcaConstants, GuidanceInapplicable, Variant
from .runner import (OUTPUT_ENV, ConfigError, FlowSetMismatch, RunConfig, compare, emit_reports, load_toml,
                     read_report_dir, run, summary_text)
from .steady import guidance

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_MISMATCH = 4
EXIT_INAPPLICABLE = 5

DEFAULT_OUTPUT = "ffsim-out"

_TABLES = {"topology", "workload", "cca"}


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in {"1", "true", "yes", "on"}:
        return True
    if t in {"0", "false", "no", "off"}:
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _parse_table(text: str) -> dict:
    """A JSON object inline, or ``@path`` to a JSON file."""
    try:
        if text.startswith("@"):
            return json.loads(Path(text[1:]).read_text())
        return json.loads(text)
    except (OSError, json.JSONDecodeError) as e:
        raise argparse.ArgumentTypeError(f"expected a JSON object or @file: {e}") from None


def _parse_interval(text: str) -> Any:
    return "rtt" if text == "rtt" else int(text)


def _parse_opt_int(text: str) -> int | None:
    return None if text.lower() in {"none", ""} else int(text)


def _field_type(f: dataclasses.Field):
    if f.name in _TABLES:
        return _parse_table
    if f.name == "sample_interval":
        return _parse_interval
    if f.name in {"max_skip", "probe_interval"}:
        return _parse_opt_int
    default = f.default
    if isinstance(default, bool):
        return _parse_bool
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    return str


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML run configuration; flags override its values")
    g = p.add_argument_group("run configuration")
    for f in dataclasses.fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        g.add_argument(flag, dest=f.name, type=_field_type(f), default=None, metavar=f.name.upper())


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    doc: dict[str, Any] = load_toml(args.config) if args.config else {}
    for f in dataclasses.fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            doc[f.name] = v
    return RunConfig.from_dict(doc)


def _output_dir(args: argparse.Namespace, cfg: RunConfig | None) -> Path:
    """Flag, then environment, then config file, then the default."""
    if getattr(args, "output_dir", None):
        return Path(args.output_dir)
    env = os.environ.get(OUTPUT_ENV)
    if env:
        return Path(env)
    if cfg is not None and cfg.output_dir:
        return Path(cfg.output_dir)
    return Path(DEFAULT_OUTPUT)


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    report = run(cfg)
    out = _output_dir(args, cfg)
    emit_reports(report, out)
    sys.stdout.write(summary_text(report))
    sys.stdout.write(f"reports: {out}\n")
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    if args.baseline_dir and args.accelerated_dir:
        base = read_report_dir(args.baseline_dir)
        acc = read_report_dir(args.accelerated_dir)
        cmp_ = compare(base, acc)
        sys.stdout.write(summary_text(acc, cmp_))
        return EXIT_OK
    if args.baseline_dir or args.accelerated_dir:
        raise ConfigError([("compare", "give two report directories, or none to run a paired comparison")])
    cfg = _config_from_args(args)
    if cfg.mode == "baseline":
        raise ConfigError([("mode", "a paired comparison needs an accelerated mode")])
    out = _output_dir(args, cfg)
    base = run(cfg.replace(mode="baseline"))
    acc = run(cfg)
    cmp_ = compare(base, acc)
    emit_reports(base, out / "baseline")
    emit_reports(acc, out / cfg.mode, cmp_)
    sys.stdout.write(summary_text(acc, cmp_))
    sys.stdout.write(f"reports: {out}\n")
    return EXIT_OK


def cmd_guidance(args: argparse.Namespace) -> int:
    variant = Variant(args.variant)
    ecn_k = None if args.ecn_k_pkts is None else args.ecn_k_pkts * args.mtu
    consts = CcaConstants(args.n, capacity=args.gbps / 8, ecn_k=ecn_k, mtu=args.mtu, variant=variant)
    g = guidance(consts, args.rtt, None, k=args.k, bdp_pkts=args.bdp_pkts)
    if args.interval_rtts is not None:
        g = guidance(consts, args.rtt, args.interval_rtts * g.sample_interval, k=args.k, bdp_pkts=args.bdp_pkts)
    sys.stdout.write(
        f"theta_min: {g.theta_min:.10f}\n"
        f"l_min: {g.l_min}\n"
        f"t_c_rtts: {g.model.t_c:.6f}\n"
        f"t_c_ns: {g.t_c_ns:.3f}\n"
        f"sample_interval_ns: {g.sample_interval:.3f}\n"
        f"k: {g.k:g}\n"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ffsim", description="Packet-level network simulation with steady-state "
                                "fast-forwarding and transient memoization.")
    sub = p.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("run", help="simulate one configuration and write reports")
    _add_config_flags(pr)
    pr.set_defaults(func=cmd_run)

    pc = sub.add_parser("compare", help="compare two report directories, or run a baseline/accelerated pair")
    pc.add_argument("baseline_dir", nargs="?")
    pc.add_argument("accelerated_dir", nargs="?")
    _add_config_flags(pc)
    pc.set_defaults(func=cmd_compare)

    pg = sub.add_parser("guidance", help="recommended theta and window length for an ECN-driven bottleneck")
    pg.add_argument("--n", type=int, required=True, help="expected competing flows")
    pg.add_argument("--bdp-pkts", type=float, required=True, help="bandwidth-delay product in packets")
    pg.add_argument("--ecn-k-pkts", type=float, default=None, help="ECN threshold in packets (default: one BDP)")
    pg.add_argument("--rtt", type=float, default=None, help="RTT in ns (default: bdp_pkts * mtu / capacity)")
    pg.add_argument("--gbps", type=float, default=10.0, help="bottleneck capacity")
    pg.add_argument("--interval-rtts", type=float, default=None, help="sample interval in RTTs (default 1)")
    pg.add_argument("--k", type=float, default=2.0, help="oscillation periods a window must cover")
    pg.add_argument("--mtu", type=int, default=1000)
    pg.add_argument("--variant", default=Variant.DctcpLike.value, choices=[v.value for v in Variant])
    pg.set_defaults(func=cmd_guidance)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        for where, msg in e.problems:
            print(f"config error: {where}: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except FlowSetMismatch as e:
        print(f"flow set mismatch: {e}", file=sys.stderr)
        return EXIT_MISMATCH
    except GuidanceInapplicable as e:
        print(f"guidance inapplicable: {e}", file=sys.stderr)
        return EXIT_INAPPLICABLE
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
