"""Exact solution of tiny capacity-constrained placement problems.

Used to check the Lagrangian optimizer. For every content the useful
placements are the node subsets in which each copy serves some demand (a
leaf always fetches from its nearest copy; farther copies only cost more
and load more links), minus those beaten by another subset that earns at
least as much while using no more of any limited resource. Contents are then
combined one at a time; partial solutions with identical resource usage are
merged, keeping the best, and any partial solution already over a capacity
is dropped (every usage term is non-negative).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .demand import Catalog, DemandModel
from .network import ROOT, TreeNetwork
from .placement import CpPlacement, Placement, nearest_servers
from .projection import Capacities

MAX_NODES = 10
MAX_FILES = 8


class OracleError(ValueError):
    pass


@dataclass(frozen=True)
class IlpOptimum:
    utility: float
    placement: Optional[Placement]  # None when infeasible

    @property
    def feasible(self) -> bool:
        return self.placement is not None


def _options(net: TreeNetwork, rates: np.ndarray, open_cost: np.ndarray):
    """Per content: (utility, storage vector, residual vector, stored mask) of useful subsets."""
    n = net.n_nodes
    pp_ext = np.append(net.path_prices, 0.0)
    leaves = list(net.leaves)
    under = [list(u) for u in net.leaves_under]
    depth_ext = np.append(net.depth, -1)
    out = []
    for f in range(rates.shape[1]):
        lam = rates[:, f]
        opts = []
        for mask in range(1 << n):
            stored = np.array([(mask >> v) & 1 for v in range(n)], dtype=bool)
            server = nearest_servers(net, stored[:, None])[:, 0]
            leaf_srv = server[leaves]
            useful = all(np.any((leaf_srv == v) & (lam > 0)) for v in np.nonzero(stored)[0])
            if not useful:
                continue
            util = float(lam @ pp_ext[leaf_srv]) - float(open_cost[stored].sum())
            resid = np.array([lam[u][depth_ext[leaf_srv[u]] < net.depth[v]].sum() if u else 0.0
                              for v, u in enumerate(under)])
            opts.append((util, stored.astype(np.float64), resid, stored))
        opts.sort(key=lambda o: -o[0])
        out.append(opts)
    return out


def _undominated(opts, sm, um):
    """Drop options another option beats on utility while using no more capacity.

    Returned options carry only the capacity-limited components.
    """
    reduced = [(u, st[sm], rs[um], mask) for u, st, rs, mask in opts]
    keep = []
    for o in reduced:  # sorted by decreasing utility
        if any(np.all(k[1] <= o[1]) and np.all(k[2] <= o[2]) for k in keep):
            continue
        keep.append(o)
    return keep


def brute_force_ilp(net: TreeNetwork, demand: DemandModel) -> IlpOptimum:
    """Exact optimum of the capacity-constrained placement problem."""
    if net.n_nodes > MAX_NODES:
        raise OracleError(f"oracle refuses {net.n_nodes} nodes (max {MAX_NODES})")
    files = [(cp, f) for cp in demand.cps for f in range(demand.catalogs[cp].size_files)]
    if len(files) > MAX_FILES:
        raise OracleError(f"oracle refuses {len(files)} contents (max {MAX_FILES})")
    caps = Capacities.of(net, demand.file_size)
    open_cost = np.asarray(net.storage_price) * demand.file_size
    per_cp = {cp: _options(net, demand.leaf_rates(cp), open_cost) for cp in demand.cps}
    sm, um = caps.storage_mask, caps.uplink_mask
    opts = [_undominated(per_cp[cp][f], sm, um) for cp, f in files]
    s_cap, u_cap = caps.storage[sm], caps.uplink[um]
    # combine contents one at a time, keeping for every distinct capacity
    # usage only the best partial utility (partial sums are monotone)
    n = net.n_nodes
    frontier = {b"": (0.0, (), np.zeros(s_cap.size), np.zeros(u_cap.size))}
    for i in range(len(files)):
        nxt: dict = {}
        for key in sorted(frontier):
            util, picks, st, rs = frontier[key]
            for k, o in enumerate(opts[i]):
                s2, r2 = st + o[1], rs + o[2]
                if np.any(s2 > s_cap) or np.any(r2 > u_cap):
                    continue
                key2 = s2.tobytes() + r2.tobytes()
                cand = util + o[0]
                if key2 not in nxt or cand > nxt[key2][0]:
                    nxt[key2] = (cand, picks + (k,), s2, r2)
        frontier = nxt
        if not frontier:
            return IlpOptimum(-np.inf, None)
    best_u, best_picks = max(((v[0], v[1]) for v in frontier.values()),
                             key=lambda v: (v[0], [-k for k in v[1]]))
    best = {"pick": [opts[i][k] for i, k in enumerate(best_picks)]}
    parts = {}
    for cp in demand.cps:
        F = demand.catalogs[cp].size_files
        stored = np.zeros((n, F), dtype=bool)
        for i, (c, f) in enumerate(files):
            if c == cp:
                stored[:, f] = best["pick"][i][3]
        server = nearest_servers(net, stored)
        parts[cp] = CpPlacement(cp, stored, server[list(net.leaves)])
    return IlpOptimum(float(best_u), Placement(parts))


def random_toy(rng: np.random.Generator, n_anos: Optional[int] = None,
               files_per_cp: Optional[int] = None) -> tuple[TreeNetwork, DemandModel]:
    """A random instance small enough for :func:`brute_force_ilp`.

    One or two ANOs, each owning either a single leaf or an intermediate node
    with one or two leaves; two CPs with up to three contents each. Leaves
    get small storage limits and some uplinks get bandwidth limits. Prices
    are small integers (zero on some nodes, as for sunk resources).
    """
    n_anos = int(rng.integers(1, 3)) if n_anos is None else n_anos
    parent, ano = [-1], [None]
    for a in range(n_anos):
        shape = int(rng.integers(0, 3))  # 0: leaf, 1: node+leaf, 2: node+2 leaves
        if shape == 0:
            parent.append(ROOT)
            ano.append(a)
            continue
        mid = len(parent)
        parent.append(ROOT)
        ano.append(a)
        for _ in range(shape):
            parent.append(mid)
            ano.append(a)
    n = len(parent)
    is_leaf = [v not in parent for v in range(n)]
    fs = 1.0
    storage_price = [float(rng.integers(0, 3)) * 0.1 for _ in range(n)]
    uplink_price = [float(rng.integers(0, 4)) for _ in range(n)]
    uplink_price[ROOT] = float(rng.integers(1, 5))
    storage_cap: list = [None] * n
    uplink_cap: list = [None] * n
    for v in range(1, n):
        if is_leaf[v]:
            storage_price[v] = 0.0 if rng.random() < 0.5 else storage_price[v]
            storage_cap[v] = float(rng.integers(1, 3))
        if rng.random() < 0.5:
            uplink_cap[v] = float(rng.integers(2, 12))
            uplink_price[v] = 0.0
    net = TreeNetwork.from_lists(parent, storage_price, uplink_price, storage_cap,
                                 uplink_cap, ano)
    catalogs, tables = {}, {}
    leaves = net.leaves
    for cp in (1, 2):
        F = int(rng.integers(1, 4)) if files_per_cp is None else files_per_cp
        catalogs[cp] = Catalog(cp, F, fs)
        tab = rng.integers(0, 5, size=(len(leaves), F)).astype(np.float64)
        tables[cp] = tab
    return net, DemandModel(net, catalogs, tables=tables)


def random_feasible_toys(seed: int, count: int) -> list[tuple[TreeNetwork, DemandModel, IlpOptimum]]:
    """``count`` random toys with a feasible optimum of non-negative utility."""
    rng = np.random.Generator(np.random.PCG64(seed))
    out = []
    while len(out) < count:
        net, dem = random_toy(rng)
        opt = brute_force_ilp(net, dem)
        if opt.feasible and opt.utility >= 0:
            out.append((net, dem, opt))
    return out
