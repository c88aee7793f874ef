"""Command-line experiment runner.

Every subcommand reads a YAML scenario (``--scenario``), writes its tables to
``--out`` as CSV (9 significant digits, ``# key: value`` metadata lines
first) or JSON, and exits 0. Failures exit nonzero with a one-line JSON error
report on stderr. ``CACHESUB_WORKERS`` sets the process count for sweeps.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .coalition import CoalitionError, verification_error_experiment
from .demand import DemandError
from .experiments import summarize
from .lagrangian import (Measurement, OptimizationError, OptimizationResult, orchestrate,
                         settle)
from .network import NetworkError
from .placement import Placement, PlacementError, make_report, route_nearest, utility
from .protocol import audit_privacy, run_protocol, same_result
from .scenario import Scenario, ScenarioError, load_scenario
from .tradeoff import TradeoffError, savings_curve
from .ufl import effective_prices, place_catalog

EXIT_NOT_FOUND, EXIT_SCHEMA, EXIT_INPUT = 2, 3, 4


class InputError(ValueError):
    pass


# -- output -------------------------------------------------------------------

def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(float(v), ".9g")
    return str(v)


def _json_value(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (float, np.floating)):
        return float(format(float(v), ".9g")) if math.isfinite(v) else fmt(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_json_value(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _json_value(x) for k, x in v.items()}
    return v


class Writer:
    def __init__(self, out: Path, fmt_: str, meta: dict):
        self.out, self.format, self.meta = out, fmt_, meta
        out.mkdir(parents=True, exist_ok=True)
        self.written: list = []

    def table(self, name: str, rows: list, columns: Optional[list] = None, extra_meta=None) -> Path:
        columns = columns or (list(rows[0]) if rows else [])
        meta = {**self.meta, **(extra_meta or {})}
        if self.format == "json":
            path = self.out / f"{name}.json"
            doc = {"meta": _json_value(meta),
                   "rows": [{c: _json_value(r.get(c)) for c in columns} for r in rows]}
            path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
        else:
            path = self.out / f"{name}.csv"
            buf = io.StringIO()
            for k in sorted(meta):
                buf.write(f"# {k}: {fmt(meta[k])}\n")
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(columns)
            for r in rows:
                w.writerow([fmt(r.get(c, "")) for c in columns])
            path.write_text(buf.getvalue())
        self.written.append(path)
        return path

    def document(self, name: str, doc: dict) -> Path:
        path = self.out / f"{name}.json"
        path.write_text(json.dumps({"meta": _json_value(self.meta), **_json_value(doc)},
                                   indent=1, sort_keys=True) + "\n")
        self.written.append(path)
        return path


def _workers() -> int:
    raw = os.environ.get("CACHESUB_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise InputError(f"CACHESUB_WORKERS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise InputError("CACHESUB_WORKERS must be >= 1")
    return n


# -- subcommands ----------------------------------------------------------------

def cmd_tradeoff(sc: Scenario, w: Writer, args) -> None:
    sc.require("tradeoff")
    rows = savings_curve(sc.tradeoff, sc.gamma_grid, sc.subsets)
    w.table("tradeoff", rows, ["gamma", "subset", "saving_fraction", "C1", "C2", "C3"])


def cmd_coalition_verify(sc: Scenario, w: Writer, args) -> None:
    sc.require("coalition")
    per_seed = [] if args.ledgers else None
    rows = verification_error_experiment(sc.coalition, per_seed)
    keys = ["r1"] + [f"err{a + 1}" for a in range(len(sc.coalition.T))] + ["err_tot"]
    w.table("coalition_verify", rows, keys)
    if per_seed:
        seen = set()
        for rec in per_seed:
            if rec["seed"] in seen:
                continue
            seen.add(rec["seed"])
            eta, zeta = rec["ledger_eta"], rec["ledger_zeta"]
            w.document(f"ledger_seed{rec['seed']}", {
                "seed": rec["seed"], "cached_files": int(eta.cached.size),
                "total_saving": eta.total_saving, "phi_eta": eta.phi, "phi_zeta": zeta.phi,
                "zeta": zeta.zeta})


def _trace_rows(sc: Scenario, result: OptimizationResult) -> tuple[list, list]:
    net = sc.network
    ub = [n for n in range(net.n_nodes) if net.uplink_cap[n] is not None]
    st = [n for n in range(net.n_nodes) if net.storage_cap[n] is not None]
    cols = ["tau", "L", "U", "feasible", "U_projected", "LB", "UB", "delta", "gamma",
            "grad_norm2"] + [f"beta_{n}" for n in ub] + [f"sigma_{n}" for n in st]
    rows = []
    for rec in result.trace:
        row = {c: getattr(rec, c) for c in cols[:10]}
        row.update({f"beta_{n}": rec.beta[n] for n in ub})
        row.update({f"sigma_{n}": rec.sigma[n] for n in st})
        rows.append(row)
    return rows, cols


def _settlement_rows(settlement) -> list:
    return [vars(r).copy() for r in settlement.rows]


SETTLE_COLS = ["ano", "cp", "share", "saving", "subsidy", "storage_payment", "co_payment",
               "transit_payment"]


def _placement_doc(sc: Scenario, result: OptimizationResult) -> dict:
    doc = {"status": result.status, "stop_reason": result.stop_reason,
           "iterations": result.iterations, "LB": result.LB, "UB": result.UB,
           "utility": result.utility, "beta": result.beta, "sigma": result.sigma,
           "ub_beta": result.ub_beta, "ub_sigma": result.ub_sigma, "cps": {}}
    if result.placement is not None:
        for cp in result.placement.cps:
            stored = np.argwhere(result.placement[cp].stored)
            doc["cps"][str(cp)] = {"stored": [[int(n), int(f)] for n, f in stored]}
    return doc


def _sweep_point(sc: Scenario, kind: str, value: Optional[float]) -> dict:
    point = sc.with_tier_cap(sc.sweep.tier, kind, value)
    result = orchestrate(point.network, point.demand, point.algorithm)
    return {"tier": sc.sweep.tier, kind: math.inf if value is None else value,
            **summarize(point.network, point.demand, result, point.shares)}


def cmd_optimize(sc: Scenario, w: Writer, args) -> None:
    sc.require("network", "demand")
    if sc.sweep is not None:
        points = sc.sweep.points()
        workers = _workers()
        if workers > 1:
            from concurrent.futures import ProcessPoolExecutor
            with ProcessPoolExecutor(workers) as pool:
                rows = list(pool.map(_sweep_point, [sc] * len(points), *zip(*points)))
        else:
            rows = [_sweep_point(sc, k, v) for k, v in points]
        cols = []
        for r in rows:
            cols += [c for c in r if c not in cols]
        w.table("sweep", rows, cols)
        return
    result = orchestrate(sc.network, sc.demand, sc.algorithm)
    rows, cols = _trace_rows(sc, result)
    w.table("trace", rows, cols, {"status": result.status, "stop_reason": result.stop_reason})
    w.document("placement", _placement_doc(sc, result))
    if result.reports is not None:
        st = settle(sc.network, sc.demand.file_size, result.reports, result.beta, result.sigma,
                    sc.shares)
        w.table("settlement", _settlement_rows(st), SETTLE_COLS)


def _read_placement(sc: Scenario, path: Path):
    doc = json.loads(path.read_text())
    net, demand = sc.network, sc.demand
    parts = {}
    for cp in demand.cps:
        stored = np.zeros((net.n_nodes, demand.catalogs[cp].size_files), dtype=bool)
        for n, f in doc.get("cps", {}).get(str(cp), {}).get("stored", []):
            if not (0 <= n < net.n_nodes and 0 <= f < stored.shape[1]):
                raise InputError(f"placement entry ({n}, {f}) outside network or catalog of CP {cp}")
            stored[n, f] = True
        parts[cp] = route_nearest(net, cp, stored)
    beta = np.asarray(doc.get("beta", np.zeros(net.n_nodes)), dtype=np.float64)
    sigma = np.asarray(doc.get("sigma", np.zeros(net.n_nodes)), dtype=np.float64)
    if beta.shape != (net.n_nodes,) or sigma.shape != (net.n_nodes,):
        raise InputError("placement file duals do not match the network")
    return Placement(parts), beta, sigma


def _read_measured(sc: Scenario, path: Path, reports) -> Measurement:
    """CSV rows ``quantity,cp,index,value``; unspecified entries keep the forecast."""
    net = sc.network
    base = Measurement.from_reports(net, reports)
    tables = {"leaf_total": {cp: v.copy() for cp, v in base.leaf_totals.items()},
              "residual": {cp: v.copy() for cp, v in base.residual.items()},
              "transit": {cp: v.copy() for cp, v in base.transit.items()}}
    lines = [ln for ln in path.read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    for i, rec in enumerate(csv.DictReader(lines), start=2):
        try:
            q, cp, idx, val = rec["quantity"], int(rec["cp"]), int(rec["index"]), float(rec["value"])
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"{path}: row {i}: expected quantity,cp,index,value") from exc
        if q not in tables or cp not in tables[q]:
            raise InputError(f"{path}: row {i}: unknown quantity {q!r} or CP {cp}")
        if q == "leaf_total":
            if idx not in net.leaf_index:
                raise InputError(f"{path}: row {i}: node {idx} is not a leaf")
            idx = net.leaf_index[idx]
        elif q == "transit":
            if idx not in net.anos:
                raise InputError(f"{path}: row {i}: unknown ANO {idx}")
            idx = list(net.anos).index(idx)
        tables[q][cp][idx] = val
    return Measurement(tables["leaf_total"], tables["residual"], tables["transit"])


def cmd_settle(sc: Scenario, w: Writer, args) -> None:
    sc.require("network", "demand")
    if args.placement is None:
        raise InputError("settle needs --placement (a placement.json written by optimize)")
    placement, beta, sigma = _read_placement(sc, Path(args.placement))
    reports = {cp: make_report(sc.network, sc.demand, placement[cp]) for cp in placement.cps}
    measured = None if args.measured is None else _read_measured(sc, Path(args.measured), reports)
    st = settle(sc.network, sc.demand.file_size, reports, beta, sigma, sc.shares, measured)
    w.table("settlement", _settlement_rows(st), SETTLE_COLS,
            {"measured": "forecast" if args.measured is None else Path(args.measured).name})


def cmd_protocol_sim(sc: Scenario, w: Writer, args) -> None:
    sc.require("network", "demand")
    run = run_protocol(sc.network, sc.demand, sc.algorithm, seed=sc.seed)
    path = w.out / "transcript.jsonl"
    run.transcript.write(path)
    w.written.append(path)
    audit = audit_privacy(run.transcript)
    doc = {"stop_reason": run.stop_reason, "messages": len(run.transcript.messages),
           "audit_ok": audit.ok, "leaks": [list(x) for x in audit.leaks]}
    if run.result is not None:
        doc.update(status=run.result.status, iterations=run.result.iterations,
                   LB=run.result.LB, UB=run.result.UB)
    if args.check_equivalence and run.result is not None:
        doc["identical_to_orchestrate"] = same_result(
            run.result, orchestrate(sc.network, sc.demand, sc.algorithm))
    w.document("protocol", doc)


def cmd_ufl(sc: Scenario, w: Writer, args) -> None:
    """Fixed-price placement of every catalog (no capacities)."""
    sc.require("network", "demand")
    net, demand = sc.network, sc.demand
    prices = effective_prices(net, demand.file_size)
    rows, parts = [], {}
    for cp in demand.cps:
        part = parts[cp] = place_catalog(net, demand, cp, prices)
        rates = demand.leaf_rates(cp).sum(axis=0)
        for f in range(part.stored.shape[1]):
            nodes = np.nonzero(part.stored[:, f])[0]
            rows.append({"cp": cp, "file": f, "demand": float(rates[f]),
                         "copies": int(nodes.size), "nodes": ";".join(str(n) for n in nodes)})
    total = utility(net, demand, Placement(parts))
    w.table("ufl", rows, ["cp", "file", "demand", "copies", "nodes"], {"utility": total})


COMMANDS = {
    "tradeoff": (cmd_tradeoff, "savings of tier subsets versus the cost factor"),
    "coalition-verify": (cmd_coalition_verify, "errors of per-ANO versus per-file subsidies"),
    "optimize": (cmd_optimize, "capacity-constrained placement (or a capacity sweep)"),
    "settle": (cmd_settle, "subsidies from a placement dump and measured traffic"),
    "protocol-sim": (cmd_protocol_sim, "message-passing run with transcript and privacy audit"),
    "ufl": (cmd_ufl, "fixed-price placement of every content"),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cachesub", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"cachesub {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--scenario", required=True, help="YAML scenario file")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        if name == "coalition-verify":
            p.add_argument("--ledgers", action="store_true", help="also dump per-seed ledgers")
        if name == "settle":
            p.add_argument("--placement", help="placement.json from optimize")
            p.add_argument("--measured", help="CSV quantity,cp,index,value of measured traffic")
        if name == "protocol-sim":
            p.add_argument("--check-equivalence", action="store_true",
                           help="also run the monolithic optimizer and compare")
    return ap


def _fail(code: int, kind: str, message: str, **extra) -> int:
    print(json.dumps({"error": kind, "message": message, **extra}, sort_keys=True), file=sys.stderr)
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is not None and not 0 <= args.seed < 2**64:
        return _fail(EXIT_INPUT, "invalid-argument", "--seed must be an unsigned 64-bit integer")
    try:
        sc = load_scenario(args.scenario, args.seed)
        meta = {"tool": f"cachesub {__version__}", "command": args.command,
                "scenario_sha256": sc.sha256, "seed": sc.seed}
        writer = Writer(Path(args.out), args.format, meta)
        COMMANDS[args.command][0](sc, writer, args)
    except FileNotFoundError as exc:
        return _fail(EXIT_NOT_FOUND, "file-not-found", f"file not found: {exc.filename}")
    except ScenarioError as exc:
        return _fail(EXIT_SCHEMA, "schema-violation", str(exc).splitlines()[0],
                     diagnostics=exc.diagnostics)
    except (InputError, OptimizationError, CoalitionError, TradeoffError, NetworkError,
            DemandError, PlacementError, json.JSONDecodeError) as exc:
        return _fail(EXIT_INPUT, "invalid-input", str(exc))
    for path in writer.written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
