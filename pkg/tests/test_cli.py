from __future__ import annotations

import json
from pathlib import Path

import pytest

from cachesub.cli import main

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"
TOY = str(SCENARIOS / "toy.yaml")


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_tradeoff_outputs_are_reproducible(tmp_path, capsys):
    for sub in ("a", "b"):
        assert run(capsys, "tradeoff", "--scenario", str(SCENARIOS / "tier_savings_e1_100.yaml"),
                   "--out", str(tmp_path / sub))[0] == 0
    a = (tmp_path / "a" / "tradeoff.csv").read_bytes()
    assert a == (tmp_path / "b" / "tradeoff.csv").read_bytes()
    lines = a.decode().splitlines()
    assert lines[0].startswith("# command: tradeoff")
    assert "gamma,subset,saving_fraction,C1,C2,C3" in lines


def test_optimize_then_settle(tmp_path, capsys):
    out = tmp_path / "opt"
    code, printed, _ = run(capsys, "optimize", "--scenario", TOY, "--out", str(out))
    assert code == 0
    assert {Path(p).name for p in printed.split()} == {"trace.csv", "placement.json", "settlement.csv"}
    doc = json.loads((out / "placement.json").read_text())
    assert doc["LB"] <= doc["UB"]
    code, _, _ = run(capsys, "settle", "--scenario", TOY, "--placement", str(out / "placement.json"),
                     "--out", str(tmp_path / "st"))
    assert code == 0
    body = lambda p: [l for l in p.read_text().splitlines() if not l.startswith("#")]
    assert body(tmp_path / "st" / "settlement.csv") == body(out / "settlement.csv")


def test_settle_with_measured_traffic(tmp_path, capsys):
    out = tmp_path / "opt"
    run(capsys, "optimize", "--scenario", TOY, "--out", str(out))
    meas = tmp_path / "measured.csv"
    meas.write_text("quantity,cp,index,value\ntransit,1,0,2.0\n")
    code, _, _ = run(capsys, "settle", "--scenario", TOY, "--placement", str(out / "placement.json"),
                     "--measured", str(meas), "--out", str(tmp_path / "m"), "--format", "json")
    assert code == 0
    doc = json.loads((tmp_path / "m" / "settlement.json").read_text())
    row = next(r for r in doc["rows"] if r["cp"] == 1)
    assert row["transit_payment"] == pytest.approx(8.0)
    meas.write_text("quantity,cp,index,value\ntransit,1,0,-2.0\n")
    code, _, err = run(capsys, "settle", "--scenario", TOY, "--placement", str(out / "placement.json"),
                       "--measured", str(meas), "--out", str(tmp_path / "m2"))
    assert code == 4 and json.loads(err)["error"] == "invalid-input"


def test_protocol_sim_and_ufl(tmp_path, capsys):
    code, _, _ = run(capsys, "protocol-sim", "--scenario", TOY, "--out", str(tmp_path),
                     "--check-equivalence")
    assert code == 0
    doc = json.loads((tmp_path / "protocol.json").read_text())
    assert doc["audit_ok"] and doc["identical_to_orchestrate"]
    assert (tmp_path / "transcript.jsonl").read_text().count("\n") == doc["messages"]
    assert run(capsys, "ufl", "--scenario", TOY, "--out", str(tmp_path))[0] == 0
    assert "# utility: 64" in (tmp_path / "ufl.csv").read_text()


def test_error_exit_codes(tmp_path, capsys):
    code, _, err = run(capsys, "optimize", "--scenario", str(tmp_path / "missing.yaml"),
                       "--out", str(tmp_path))
    assert code == 2 and json.loads(err)["error"] == "file-not-found"
    bad = tmp_path / "bad.yaml"
    bad.write_text("schema_version: 1\ntradeoff: {e1: 0}\n")
    code, _, err = run(capsys, "tradeoff", "--scenario", str(bad), "--out", str(tmp_path))
    rep = json.loads(err)
    assert code == 3 and rep["error"] == "schema-violation" and rep["diagnostics"]
    code, _, err = run(capsys, "optimize", "--scenario", str(SCENARIOS / "tier_savings_e1_100.yaml"),
                       "--out", str(tmp_path))
    assert code == 3
    code, _, err = run(capsys, "settle", "--scenario", TOY, "--out", str(tmp_path))
    assert code == 4
