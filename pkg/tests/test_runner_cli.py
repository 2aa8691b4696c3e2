from __future__ import annotations

import csv
import os

import pytest

from ffsim import cli
from ffsim.runner import (ConfigError, FlowSetMismatch, RunConfig, RunReport, compare, emit_reports, read_report_dir,
                          run)
from ffsim.scenarios import single_flow
from ffsim.sim import FlowResult

C = 1.25
MiB = 1 << 20


def small_flows(n=3):
    return {"kind": "flows", "flows": [{"id": f"f{i}", "src": i, "dst": 15, "size": 300_000} for i in range(n)]}


def small_cfg(**kw):
    return RunConfig(workload=small_flows(), **kw)


def periodic(reps=2, payload=3 * MiB // 2):
    return {"kind": "collectives", "collectives": [
        {"kind": "AllToAll", "participants": [0, 4, 8, 12], "payload": payload, "repetitions": reps, "name": "x"}]}


def test_config_validation_lists_fields():
    with pytest.raises(ConfigError) as ei:
        RunConfig.from_dict({"theta": 1.5, "l": 1, "workload": small_flows(), "mode": "fast"})
    fields = {f for f, _ in ei.value.problems}
    assert {"theta", "l", "mode"} <= fields


def test_unknown_field_rejected():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"workload": small_flows(), "colour": "blue"})


def test_baseline_twice_is_identical(tmp_path):
    a, b = run(small_cfg(mode="baseline")), run(small_cfg(mode="baseline"))
    emit_reports(a, tmp_path / "a")
    emit_reports(b, tmp_path / "b")
    assert (tmp_path / "a/fct.csv").read_bytes() == (tmp_path / "b/fct.csv").read_bytes()
    assert a.log_digest == b.log_digest


def test_uncontended_flow_one_skip_near_line_rate():
    cfg = single_flow()
    rep = run(cfg)
    size = 20_000_000
    assert rep.counters["skips"] == 1
    assert len({s.pid for s in rep.segments}) == 1
    assert sum(s.bytes for s in rep.segments) > 0.5 * size
    fct = rep.fct()["solo"]
    assert abs(fct - size / C) / (size / C) < cfg.theta


def test_report_completeness():
    rep = run(small_cfg(mode="wormhole"))
    assert sorted(rep.fct()) == ["f0", "f1", "f2"]


def test_compare_identical_reports():
    rep = run(small_cfg(mode="baseline"))
    c = compare(rep, rep)
    assert c.mean_error == 0 and c.max_error == 0 and c.speedup == 1 and c.skipped_ratio == 0


def test_compare_flow_set_mismatch():
    rep = run(small_cfg(mode="baseline"))
    fewer = RunReport(rep.mode, rep.flows[:-1], rep.counters, rep.wall_seconds)
    with pytest.raises(FlowSetMismatch):
        compare(rep, fewer)


def test_compare_arithmetic():
    base = RunReport("baseline", [FlowResult("a", 10, 0, 100), FlowResult("b", 10, 0, 200)],
                     {"events_dispatched": 1000}, 1.0)
    acc = RunReport("wormhole", [FlowResult("a", 10, 0, 110), FlowResult("b", 10, 0, 200)],
                    {"events_dispatched": 50}, 0.1)
    c = compare(base, acc)
    assert c.errors == {"a": pytest.approx(0.1), "b": 0.0}
    assert c.mean_error == pytest.approx(0.05) and c.speedup == 20 and c.skipped_ratio == pytest.approx(0.95)


def test_emit_header_only_for_empty(tmp_path):
    emit_reports(RunReport("baseline", [], {}, 0.0), tmp_path)
    assert (tmp_path / "fct.csv").read_text() == "id,size,start,finish,fct\n"


def test_emit_three_rows_and_round_trip(tmp_path):
    rep = run(small_cfg(mode="baseline"))
    emit_reports(rep, tmp_path)
    rows = list(csv.reader(open(tmp_path / "fct.csv")))
    assert rows[0] == ["id", "size", "start", "finish", "fct"] and len(rows) == 4
    back = read_report_dir(tmp_path)
    assert back.fct() == rep.fct() and back.counters == rep.counters


def test_emit_overwrites_atomically(tmp_path):
    (tmp_path / "fct.csv").write_text("stale\n")
    emit_reports(RunReport("baseline", [], {}, 0.0), tmp_path)
    assert (tmp_path / "fct.csv").read_text().startswith("id,")
    assert not [p for p in os.listdir(tmp_path) if p.endswith(".tmp")]


def test_mode_nesting_on_repeated_pattern():
    counts = {m: run(RunConfig(workload=periodic(), mode=m, theta=0.05, l=3, sample_mult=8.0)).counters
              for m in ("baseline", "steady-only", "wormhole")}
    d = {m: c["events_dispatched"] for m, c in counts.items()}
    assert d["baseline"] >= d["steady-only"] >= d["wormhole"]
    assert counts["baseline"]["skips"] == 0 and counts["steady-only"]["memo_hits"] == 0
    assert counts["wormhole"]["memo_hits"] > 0


# -- command line -------------------------------------------------------------------

def write_toml(path, mode="baseline", extra=""):
    path.write_text(f'''mode = "{mode}"
theta = 0.05
{extra}
[workload]
kind = "flows"
[[workload.flows]]
id = "only"
src = 0
dst = 1
size = 100000
''')
    return path


def test_cli_run_from_toml(tmp_path, capsys):
    cfg = write_toml(tmp_path / "run.toml")
    assert cli.main(["run", "--config", str(cfg), "--output-dir", str(tmp_path / "out")]) == 0
    assert "mode: baseline" in capsys.readouterr().out
    assert len((tmp_path / "out/fct.csv").read_text().splitlines()) == 2


def test_cli_flag_overrides_toml(tmp_path, capsys):
    cfg = write_toml(tmp_path / "run.toml")
    assert cli.main(["run", "--config", str(cfg), "--mode", "steady-only", "--output-dir", str(tmp_path)]) == 0
    assert "mode: steady-only" in capsys.readouterr().out


def test_cli_env_output_dir(tmp_path, monkeypatch):
    cfg = write_toml(tmp_path / "run.toml", extra=f'output_dir = "{tmp_path / "fromfile"}"')
    monkeypatch.setenv("FFSIM_OUTPUT_DIR", str(tmp_path / "fromenv"))
    assert cli.main(["run", "--config", str(cfg)]) == 0
    assert (tmp_path / "fromenv/fct.csv").exists() and not (tmp_path / "fromfile").exists()


def test_cli_has_flag_for_every_field():
    import dataclasses
    text = cli.build_parser()._subparsers._group_actions[0].choices["run"].format_help()
    for f in dataclasses.fields(RunConfig):
        assert "--" + f.name.replace("_", "-") in text


def test_cli_config_error_exit(tmp_path, capsys):
    cfg = write_toml(tmp_path / "run.toml")
    assert cli.main(["run", "--config", str(cfg), "--theta", "2"]) == cli.EXIT_CONFIG
    assert "theta" in capsys.readouterr().err


def test_cli_bad_toml_exit(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("mode = \n")
    assert cli.main(["run", "--config", str(bad)]) == cli.EXIT_CONFIG


def test_cli_io_error_exit(tmp_path):
    assert cli.main(["run", "--config", str(tmp_path / "missing.toml")]) != 0
    cfg = write_toml(tmp_path / "run.toml")
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cli.main(["run", "--config", str(cfg), "--output-dir", str(blocker / "sub")]) == cli.EXIT_IO


def test_cli_compare_dirs(tmp_path, capsys):
    cfg = write_toml(tmp_path / "run.toml")
    cli.main(["run", "--config", str(cfg), "--output-dir", str(tmp_path / "a")])
    cli.main(["run", "--config", str(cfg), "--output-dir", str(tmp_path / "b")])
    assert cli.main(["compare", str(tmp_path / "a"), str(tmp_path / "b")]) == 0
    assert "mean_fct_error: 0.000000" in capsys.readouterr().out


def test_cli_compare_mismatch_exit(tmp_path):
    a = run(small_cfg(mode="baseline"))
    emit_reports(a, tmp_path / "a")
    emit_reports(RunReport("baseline", a.flows[:1], a.counters, 0.0), tmp_path / "b")
    assert cli.main(["compare", str(tmp_path / "a"), str(tmp_path / "b")]) == cli.EXIT_MISMATCH


def test_cli_compare_paired_run(tmp_path, capsys):
    cfg = write_toml(tmp_path / "run.toml", mode="wormhole")
    assert cli.main(["compare", "--config", str(cfg), "--output-dir", str(tmp_path)]) == 0
    assert (tmp_path / "baseline/fct.csv").exists() and (tmp_path / "wormhole/fct.csv").exists()
    assert "event_speedup" in capsys.readouterr().out


def test_cli_guidance(capsys):
    assert cli.main(["guidance", "--n", "8", "--bdp-pkts", "1000"]) == 0
    out = capsys.readouterr().out
    assert "theta_min: 0.0591607978" in out


def test_cli_guidance_inapplicable():
    assert cli.main(["guidance", "--n", "8", "--bdp-pkts", "1000", "--variant", "HpccLike"]) == cli.EXIT_INAPPLICABLE
