"""YAML scenario files.

A scenario describes a network, per-CP demand, subsidy shares, algorithm
parameters and the settings of the experiment families. Physical quantities
(prices, capacities, demand) have no defaults; algorithm parameters do.
Problems are collected with the field path and source line of the offending
entry and raised together as a :class:`ScenarioError`.

Schema version 1::

    schema_version: 1
    seed: 0
    network:
      symmetric: {e1: 10, e2: 5, n_anos: 2,
                  storage_price: [0.0, 0.03, 0.03],   # $/GB/month, tiers 1..3
                  uplink_price: [0.0, 0.0, 4.0],      # $/(Mb/s)/month
                  storage_cap: [0.2, null, null],     # GB, null = elastic
                  uplink_cap: [22, 150, null]}        # Mb/s, null = elastic
      # or explicit: {nodes: [{id, parent, ano, storage_price, uplink_price,
      #                        storage_cap, uplink_cap}, ...]}
    demand:
      file_size_gb: 0.001
      cps:
        - {id: 1, files: 10000, zipf: {alpha: 0.8, per_ano_total: {0: 100, 1: 100},
                                       permute_per_ano: false}}
        - {id: 2, files: 3, rows: [[leaf, file, rate], ...]}
    shares: {default: 0.5, overrides: [{ano: 0, cp: 1, r: 0.3}]}
    algorithm: {gamma: 1.0, eps_rel: 1.0e-3, tau_max: 500, patience: 10}
    sweep: {tier: 2, uplink_cap: [100, 130, 160, 190, 400]}
    tradeoff: {...}    # see TRADEOFF_KEYS
    coalition: {...}   # see COALITION_KEYS
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import yaml

from .coalition import VerificationParams
from .demand import Catalog, DemandError, DemandModel, explicit_demand, merge, synthesize_zipf_demand
from .lagrangian import AlgoParams, OptimizationError
from .network import NetworkError, TierSpec, TreeNetwork, build_symmetric_3tier, validate
from .tradeoff import ALL_TIERS, DEFAULT_SUBSETS, TierParams, TradeoffError, parse_subset

SCHEMA_VERSION = 1
TOP_KEYS = {"schema_version", "seed", "experiment", "network", "demand", "shares",
            "algorithm", "sweep", "tradeoff", "coalition", "description"}
TIER_KEYS = {"storage_price", "uplink_price", "storage_cap", "uplink_cap"}
NODE_KEYS = {"id", "parent", "ano"} | TIER_KEYS
ALGO_KEYS = {"gamma", "eps_rel", "tau_max", "patience", "early_stop"}
TRADEOFF_KEYS = {"e1", "e2", "F", "alpha", "s", "b", "gamma_grid", "subsets"}
COALITION_KEYS = {"F", "alpha", "T", "s", "b", "r2", "r1_grid", "seeds"}
SWEEP_KEYS = {"tier", "uplink_cap", "storage_cap"}


class ScenarioError(ValueError):
    """Schema violations; ``diagnostics`` lists ``{"field", "line", "problem"}`` records."""

    def __init__(self, diagnostics: list):
        self.diagnostics = diagnostics
        lines = [f"{d['field']}" + (f" (line {d['line']})" if d.get("line") else "")
                 + f": {d['problem']}" for d in diagnostics]
        super().__init__("invalid scenario:\n  " + "\n  ".join(lines))


@dataclass
class Sweep:
    tier: int
    uplink_cap: Optional[list] = None
    storage_cap: Optional[list] = None

    def points(self) -> list[tuple[str, Optional[float]]]:
        """``(kind, value)`` per grid point; ``None`` means unlimited."""
        kind = "uplink_cap" if self.uplink_cap is not None else "storage_cap"
        return [(kind, None if v is None else float(v)) for v in getattr(self, kind)]


@dataclass
class Scenario:
    raw: dict
    sha256: str
    seed: int = 0
    network: Optional[TreeNetwork] = None
    demand: Optional[DemandModel] = None
    shares: dict = field(default_factory=dict)       # (ano, cp) -> r
    algorithm: AlgoParams = AlgoParams()
    sweep: Optional[Sweep] = None
    tradeoff: Optional[TierParams] = None
    gamma_grid: Optional[np.ndarray] = None
    subsets: tuple = DEFAULT_SUBSETS
    coalition: Optional[VerificationParams] = None
    # symmetric network shorthand, kept so sweeps can rebuild the tree
    symmetric: Optional[dict] = None

    def require(self, *sections: str) -> None:
        missing = [s for s in sections if getattr(self, s) is None]
        if missing:
            raise ScenarioError([{"field": s, "line": None, "problem": "section required by this command"}
                                 for s in missing])

    def with_tier_cap(self, tier: int, kind: str, value: Optional[float]) -> "Scenario":
        """Copy with one tier capacity of a symmetric network replaced (demand rebuilt)."""
        if self.symmetric is None:
            raise ScenarioError([{"field": "sweep", "line": None,
                                  "problem": "sweeps need a symmetric network"}])
        sym = {k: list(v) if isinstance(v, list) else v for k, v in self.symmetric.items()}
        sym[kind][tier - 1] = value
        net = _symmetric(sym)
        return replace(self, network=net, demand=_rebuild_demand(self.demand, net), symmetric=sym)


# -- YAML with line numbers -------------------------------------------------

def _line_index(text: str) -> dict:
    """Map field paths (tuples of keys/indices) to 1-based source lines."""
    out: dict = {}
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError:
        return out

    def walk(node, path):
        out[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = yaml.safe_load(k.value) if k.tag.endswith(":int") else k.value
                out[path + (key,)] = k.start_mark.line + 1
                walk(v, path + (key,))
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                walk(v, path + (i,))

    if root is not None:
        walk(root, ())
    return out


class _Checker:
    def __init__(self, lines: dict):
        self.lines = lines
        self.problems: list = []

    def fail(self, path: tuple, problem: str) -> None:
        line = None
        for cut in range(len(path), -1, -1):
            if path[:cut] in self.lines:
                line = self.lines[path[:cut]]
                break
        name = ".".join(str(p) for p in path) or "<root>"
        self.problems.append({"field": name, "line": line, "problem": problem})

    def mapping(self, obj, path, allowed=None) -> dict:
        if not isinstance(obj, dict):
            self.fail(path, "expected a mapping")
            return {}
        if allowed is not None:
            for k in obj:
                if k not in allowed:
                    self.fail(path + (k,), "unknown field")
        return obj

    def need(self, obj: dict, key, path):
        if key not in obj:
            self.fail(path + (key,), "required field missing")
            return None
        return obj[key]

    def number(self, obj: dict, key, path, low=None, allow_null=False, required=True, integer=False,
               default=None):
        if key not in obj:
            if required:
                self.fail(path + (key,), "required field missing")
            return default
        v = obj[key]
        if v is None and allow_null:
            return None
        ok = isinstance(v, int) if integer else isinstance(v, (int, float))
        if isinstance(v, bool) or not ok or not math.isfinite(float(v)):
            self.fail(path + (key,), f"expected {'an integer' if integer else 'a number'}, got {v!r}")
            return default
        if low is not None and v < low:
            self.fail(path + (key,), f"must be >= {low}")
            return default
        return v

    def numbers(self, obj: dict, key, path, length=None, low=None, allow_null=False,
                required=True):
        if key not in obj:
            if required:
                self.fail(path + (key,), "required field missing")
            return None
        seq = obj[key]
        if not isinstance(seq, list) or (length is not None and len(seq) != length):
            want = f"a list of {length} numbers" if length else "a list of numbers"
            self.fail(path + (key,), f"expected {want}")
            return None
        out = []
        for i, v in enumerate(seq):
            if v is None and allow_null:
                out.append(None)
                continue
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(float(v)):
                self.fail(path + (key, i), f"expected a number, got {v!r}")
                return None
            if low is not None and v < low:
                self.fail(path + (key, i), f"must be >= {low}")
                return None
            out.append(float(v))
        return out


# -- sections ---------------------------------------------------------------

def _symmetric(sym: dict) -> TreeNetwork:
    spec = TierSpec(tuple(sym["storage_price"]), tuple(sym["uplink_price"]),
                    tuple(sym["storage_cap"]), tuple(sym["uplink_cap"]))
    return build_symmetric_3tier(sym["e1"], sym["e2"], spec, n_anos=sym["n_anos"])


def _network(ck: _Checker, obj, path) -> tuple[Optional[TreeNetwork], Optional[dict]]:
    obj = ck.mapping(obj, path, {"symmetric", "explicit"})
    if ("symmetric" in obj) == ("explicit" in obj):
        ck.fail(path, "exactly one of 'symmetric' or 'explicit' required")
        return None, None
    if "symmetric" in obj:
        p = path + ("symmetric",)
        sym = ck.mapping(obj["symmetric"], p, {"e1", "e2", "n_anos"} | TIER_KEYS)
        out = {k: ck.number(sym, k, p, low=1, integer=True) for k in ("e1", "e2")}
        out["n_anos"] = ck.number(sym, "n_anos", p, low=1, integer=True, required=False, default=1)
        for k in ("storage_price", "uplink_price"):
            out[k] = ck.numbers(sym, k, p, length=3, low=0)
        for k in ("storage_cap", "uplink_cap"):
            out[k] = ck.numbers(sym, k, p, length=3, low=0, allow_null=True)
        if any(v is None for v in out.values()) or ck.problems:
            return None, None
        try:
            return _symmetric(out), out
        except NetworkError as exc:
            ck.fail(p, str(exc))
            return None, None
    p = path + ("explicit",)
    ex = ck.mapping(obj["explicit"], p, {"nodes"})
    nodes = ck.need(ex, "nodes", p)
    if not isinstance(nodes, list) or not nodes:
        ck.fail(p + ("nodes",), "expected a non-empty list of nodes")
        return None, None
    cols = {k: [] for k in ("parent", "ano", *sorted(TIER_KEYS))}
    for i, node in enumerate(nodes):
        q = p + ("nodes", i)
        node = ck.mapping(node, q, NODE_KEYS)
        if node.get("id") != i:
            ck.fail(q + ("id",), f"node ids must be 0, 1, 2, ... in order (expected {i})")
        parent = node.get("parent")
        if i == 0 and parent is not None:
            ck.fail(q + ("parent",), "node 0 is the CO and has no parent")
        if i > 0 and (not isinstance(parent, int) or isinstance(parent, bool)):
            ck.fail(q + ("parent",), "expected an integer node id")
        cols["parent"].append(-1 if i == 0 else parent)
        ano = node.get("ano")
        if i > 0 and (not isinstance(ano, int) or isinstance(ano, bool)):
            ck.fail(q + ("ano",), "expected an integer ANO id")
        cols["ano"].append(None if i == 0 else ano)
        for k in ("storage_price", "uplink_price"):
            cols[k].append(ck.number(node, k, q, low=0))
        for k in ("storage_cap", "uplink_cap"):
            cols[k].append(ck.number(node, k, q, low=0, allow_null=True))
    if ck.problems:
        return None, None
    try:
        net = TreeNetwork.from_lists(cols["parent"], cols["storage_price"], cols["uplink_price"],
                                     cols["storage_cap"], cols["uplink_cap"], cols["ano"])
    except NetworkError as exc:
        ck.fail(p + ("nodes",), str(exc))
        return None, None
    for problem in validate(net):
        ck.fail(p + ("nodes",), problem)
    return net, None


def _demand(ck: _Checker, obj, path, net: TreeNetwork, seed: int) -> Optional[DemandModel]:
    obj = ck.mapping(obj, path, {"file_size_gb", "cps"})
    fs = ck.number(obj, "file_size_gb", path, low=0)
    if fs is not None and fs <= 0:
        ck.fail(path + ("file_size_gb",), "must be > 0")
    cps = ck.need(obj, "cps", path)
    if not isinstance(cps, list) or not cps:
        ck.fail(path + ("cps",), "expected a non-empty list of CPs")
        return None
    models, seen = [], set()
    for i, cp in enumerate(cps):
        q = path + ("cps", i)
        cp = ck.mapping(cp, q, {"id", "files", "zipf", "rows"})
        cid = ck.number(cp, "id", q, low=0, integer=True)
        files = ck.number(cp, "files", q, low=1, integer=True)
        if cid in seen:
            ck.fail(q + ("id",), f"CP {cid} defined twice")
        seen.add(cid)
        if ("zipf" in cp) == ("rows" in cp):
            ck.fail(q, "exactly one of 'zipf' or 'rows' required")
            continue
        if cid is None or files is None or fs is None or fs <= 0:
            continue
        cat = Catalog(cid, files, fs)
        try:
            if "zipf" in cp:
                z = ck.mapping(cp["zipf"], q + ("zipf",), {"alpha", "per_ano_total", "permute_per_ano"})
                alpha = ck.number(z, "alpha", q + ("zipf",), low=0)
                tot = ck.mapping(ck.need(z, "per_ano_total", q + ("zipf",)) or {},
                                 q + ("zipf", "per_ano_total"))
                totals = {}
                for a, t in tot.items():
                    if a not in net.anos:
                        ck.fail(q + ("zipf", "per_ano_total", a), f"unknown ANO {a}")
                    totals[a] = ck.number(tot, a, q + ("zipf", "per_ano_total"), low=0)
                permute = z.get("permute_per_ano", False)
                if alpha is None or any(t is None for t in totals.values()):
                    continue
                models.append(synthesize_zipf_demand(net, cat, totals, alpha, bool(permute), seed))
            else:
                rows = cp["rows"]
                if not isinstance(rows, list):
                    ck.fail(q + ("rows",), "expected a list of [leaf, file, rate] rows")
                    continue
                clean = []
                for j, row in enumerate(rows):
                    if (not isinstance(row, list) or len(row) != 3
                            or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in row)):
                        ck.fail(q + ("rows", j), "expected [leaf, file, rate]")
                        continue
                    if row[2] < 0:
                        ck.fail(q + ("rows", j), "rate must be >= 0")
                        continue
                    clean.append((int(row[0]), cid, int(row[1]), float(row[2])))
                models.append(explicit_demand(net, {cid: cat}, clean))
        except DemandError as exc:
            ck.fail(q, str(exc))
    if ck.problems or not models:
        return None
    return merge(models)


def _rebuild_demand(demand: DemandModel, net: TreeNetwork) -> DemandModel:
    return DemandModel(net, dict(demand.catalogs), tables=dict(demand.tables), zipf=dict(demand.zipf))


def _shares(ck: _Checker, obj, path, net, demand) -> dict:
    obj = ck.mapping(obj, path, {"default", "overrides"})
    default = ck.number(obj, "default", path, low=0, required=False, default=0.0)
    if default is not None and default > 1:
        ck.fail(path + ("default",), "must lie in [0, 1]")
    out = {(a, k): float(default or 0.0) for a in net.anos for k in demand.cps}
    for i, o in enumerate(obj.get("overrides", []) or []):
        q = path + ("overrides", i)
        o = ck.mapping(o, q, {"ano", "cp", "r"})
        a, k, r = o.get("ano"), o.get("cp"), ck.number(o, "r", q, low=0)
        if a not in net.anos:
            ck.fail(q + ("ano",), f"unknown ANO {a}")
        if k not in demand.cps:
            ck.fail(q + ("cp",), f"unknown CP {k}")
        if r is not None and r > 1:
            ck.fail(q + ("r",), "must lie in [0, 1]")
        elif r is not None:
            out[(a, k)] = float(r)
    return out


def _algorithm(ck: _Checker, obj, path) -> AlgoParams:
    obj = ck.mapping(obj, path, ALGO_KEYS)
    d = AlgoParams()
    kw = dict(gamma=ck.number(obj, "gamma", path, low=0, required=False, default=d.gamma),
              eps_rel=ck.number(obj, "eps_rel", path, low=0, required=False, default=d.eps_rel),
              tau_max=ck.number(obj, "tau_max", path, low=1, integer=True, required=False,
                                default=d.tau_max),
              patience=ck.number(obj, "patience", path, low=1, integer=True, required=False,
                                 default=d.patience))
    es = obj.get("early_stop", False)
    if not isinstance(es, bool):
        ck.fail(path + ("early_stop",), "expected true or false")
        es = False
    try:
        return AlgoParams(early_stop=es, **kw)
    except OptimizationError as exc:
        ck.fail(path, str(exc))
        return d


def _grid(ck: _Checker, obj, key, path):
    """A list of values, or ``{log_start, log_stop, points}`` (base-10 exponents)."""
    v = obj.get(key)
    if isinstance(v, dict):
        g = ck.mapping(v, path + (key,), {"log_start", "log_stop", "points"})
        a = ck.number(g, "log_start", path + (key,))
        b = ck.number(g, "log_stop", path + (key,))
        n = ck.number(g, "points", path + (key,), low=1, integer=True)
        return None if None in (a, b, n) else np.logspace(a, b, n)
    vals = ck.numbers(obj, key, path)
    return None if vals is None else np.array(vals)


def _tradeoff(ck: _Checker, obj, path):
    obj = ck.mapping(obj, path, TRADEOFF_KEYS)
    e1 = ck.number(obj, "e1", path, low=1, integer=True)
    e2 = ck.number(obj, "e2", path, low=1, integer=True)
    F = ck.number(obj, "F", path, low=0)
    alpha = ck.number(obj, "alpha", path, low=0)
    s = ck.numbers(obj, "s", path, length=3, low=0)
    b = ck.numbers(obj, "b", path, length=3, low=0)
    grid = _grid(ck, obj, "gamma_grid", path)
    subsets = DEFAULT_SUBSETS
    if "subsets" in obj:
        try:
            subsets = tuple(parse_subset(str(x)) for x in obj["subsets"])
        except (TradeoffError, TypeError) as exc:
            ck.fail(path + ("subsets",), str(exc))
    if None in (e1, e2, F, alpha, s, b) or grid is None:
        return None, None, subsets
    try:
        # T is set per grid point from the cost factor
        params = TierParams(e1=e1, e2=e2, T=1.0, F=F, alpha=alpha, s=tuple(s), b=tuple(b),
                            enabled_tiers=ALL_TIERS)
    except TradeoffError as exc:
        ck.fail(path, str(exc))
        return None, None, subsets
    if np.any(grid <= 0):
        ck.fail(path + ("gamma_grid",), "cost factors must be > 0")
    return params, grid, subsets


def _coalition(ck: _Checker, obj, path):
    obj = ck.mapping(obj, path, COALITION_KEYS)
    F = ck.number(obj, "F", path, low=1, integer=True)
    alpha = ck.number(obj, "alpha", path, low=0)
    T = ck.numbers(obj, "T", path, low=0)
    s = ck.number(obj, "s", path, low=0)
    b = ck.number(obj, "b", path, low=0)
    r2 = ck.number(obj, "r2", path, low=0)
    r1 = ck.numbers(obj, "r1_grid", path, low=0)
    seeds = obj.get("seeds")
    if isinstance(seeds, int) and not isinstance(seeds, bool) and seeds >= 1:
        seeds = tuple(range(seeds))
    elif isinstance(seeds, list) and all(isinstance(x, int) for x in seeds) and seeds:
        seeds = tuple(seeds)
    else:
        ck.fail(path + ("seeds",), "expected a count >= 1 or a list of integer seeds")
        seeds = None
    for name, v in (("r2", r2), *(("r1_grid", x) for x in (r1 or []))):
        if v is not None and v > 1:
            ck.fail(path + (name,), "shares must lie in [0, 1]")
    if None in (F, alpha, T, s, b, r2, r1, seeds) or ck.problems:
        return None
    if len(T) < 2:
        ck.fail(path + ("T",), "at least two ANOs required")
        return None
    return VerificationParams(F=F, alpha=alpha, T=tuple(T), s=s, b=b, r2=r2,
                              r1_grid=tuple(r1), seeds=seeds)


def _sweep(ck: _Checker, obj, path) -> Optional[Sweep]:
    obj = ck.mapping(obj, path, SWEEP_KEYS)
    tier = ck.number(obj, "tier", path, low=1, integer=True)
    if tier is not None and tier > 2:
        ck.fail(path + ("tier",), "only tiers 1 and 2 may be swept (the CO is elastic)")
    if ("uplink_cap" in obj) == ("storage_cap" in obj):
        ck.fail(path, "exactly one of 'uplink_cap' or 'storage_cap' required")
        return None
    key = "uplink_cap" if "uplink_cap" in obj else "storage_cap"
    vals = ck.numbers(obj, key, path, low=0, allow_null=True)
    if tier is None or vals is None:
        return None
    return Sweep(tier, **{key: vals})


# -- entry points -------------------------------------------------------------

def parse_scenario(text: str, seed: Optional[int] = None) -> Scenario:
    """Validate scenario text; raises :class:`ScenarioError` with every problem found.

    ``seed`` overrides the scenario's own seed (it drives random rankings).
    """
    lines = _line_index(text)
    ck = _Checker(lines)
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ScenarioError([{"field": "<yaml>", "line": mark.line + 1 if mark else None,
                              "problem": str(exc).splitlines()[0]}]) from exc
    raw = ck.mapping(raw, (), TOP_KEYS)
    if raw.get("schema_version") != SCHEMA_VERSION:
        ck.fail(("schema_version",), f"expected schema_version {SCHEMA_VERSION}")
    sc = Scenario(raw, hashlib.sha256(text.encode()).hexdigest())
    seed = raw.get("seed", 0) if seed is None else seed
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        ck.fail(("seed",), "expected an unsigned 64-bit integer")
    else:
        sc.seed = seed
    if "network" in raw:
        sc.network, sc.symmetric = _network(ck, raw["network"], ("network",))
    if "demand" in raw:
        if sc.network is None:
            if "network" not in raw:
                ck.fail(("demand",), "demand needs a network section")
        else:
            sc.demand = _demand(ck, raw["demand"], ("demand",), sc.network, sc.seed)
    if sc.demand is not None:
        sc.shares = _shares(ck, raw.get("shares", {}), ("shares",), sc.network, sc.demand)
    elif "shares" in raw:
        ck.fail(("shares",), "shares need network and demand sections")
    if "algorithm" in raw:
        sc.algorithm = _algorithm(ck, raw["algorithm"], ("algorithm",))
    if "sweep" in raw:
        sc.sweep = _sweep(ck, raw["sweep"], ("sweep",))
        if sc.sweep is not None and sc.network is not None and sc.symmetric is None:
            ck.fail(("sweep",), "sweeps need a symmetric network")
    if "tradeoff" in raw:
        sc.tradeoff, sc.gamma_grid, sc.subsets = _tradeoff(ck, raw["tradeoff"], ("tradeoff",))
    if "coalition" in raw:
        sc.coalition = _coalition(ck, raw["coalition"], ("coalition",))
    if ck.problems:
        raise ScenarioError(ck.problems)
    return sc


def load_scenario(path, seed: Optional[int] = None) -> Scenario:
    """Read and validate a scenario file (``FileNotFoundError`` if absent)."""
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read(), seed)
