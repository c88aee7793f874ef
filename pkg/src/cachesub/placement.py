"""Content placements and the aggregate quantities derived from them.

A placement holds, per CP, the storage indicators ``stored[n, f]`` and the
delivery assignment ``server[leaf_pos, f]`` (node id, or ``ORIGIN``).
Cache sizes are counted in content slots; multiply by ``file_size`` for GB.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .demand import DemandModel
from .network import ROOT, TreeNetwork

ORIGIN = -1


class PlacementError(ValueError):
    pass


@dataclass
class CpPlacement:
    cp: int
    stored: np.ndarray  # (n_nodes, F_k) bool
    server: np.ndarray  # (n_leaves, F_k) int

    def copy(self) -> "CpPlacement":
        return CpPlacement(self.cp, self.stored.copy(), self.server.copy())


@dataclass
class Placement:
    parts: dict[int, CpPlacement] = field(default_factory=dict)

    @property
    def cps(self) -> tuple[int, ...]:
        return tuple(sorted(self.parts))

    def __getitem__(self, cp: int) -> CpPlacement:
        return self.parts[cp]

    def copy(self) -> "Placement":
        return Placement({k: p.copy() for k, p in self.parts.items()})

    def same_as(self, other: "Placement") -> bool:
        return self.cps == other.cps and all(
            np.array_equal(self[k].stored, other[k].stored)
            and np.array_equal(self[k].server, other[k].server) for k in self.cps)


def empty_placement(net: TreeNetwork, demand: DemandModel) -> Placement:
    parts = {}
    for cp, cat in demand.catalogs.items():
        parts[cp] = CpPlacement(cp, np.zeros((net.n_nodes, cat.size_files), dtype=bool),
                                np.full((len(net.leaves), cat.size_files), ORIGIN, dtype=np.int64))
    return Placement(parts)


def nearest_servers(net: TreeNetwork, stored: np.ndarray) -> np.ndarray:
    """Server of every node/file pair: nearest storing node on the path up, else ORIGIN."""
    server = np.empty(stored.shape, dtype=np.int64)
    for n in net.order:
        up = ORIGIN if n == ROOT else server[net.parent[n]]
        server[n] = np.where(stored[n], n, up)
    return server


def route_nearest(net: TreeNetwork, cp: int, stored: np.ndarray) -> CpPlacement:
    server = nearest_servers(net, stored)
    return CpPlacement(cp, stored, server[list(net.leaves)])


def check_routing(net: TreeNetwork, part: CpPlacement) -> None:
    """Raise if a leaf is served by a node that does not store the file or is off its path."""
    served = part.server != ORIGIN
    if not served.any():
        return
    leaf_pos, files = np.nonzero(served)
    nodes = part.server[served]
    if np.any(nodes < 0) or np.any(nodes >= net.n_nodes):
        raise PlacementError(f"CP {part.cp}: leaf served by unknown node")
    bad = ~part.stored[nodes, files]
    if bad.any():
        i = int(np.argmax(bad))
        raise PlacementError(f"CP {part.cp}: leaf {net.leaves[leaf_pos[i]]} served file "
                             f"{int(files[i])} by node {int(nodes[i])} which does not store it")
    off = ~_on_path(net)[nodes, leaf_pos]
    if off.any():
        i = int(np.argmax(off))
        raise PlacementError(f"CP {part.cp}: leaf {net.leaves[leaf_pos[i]]} served from "
                             f"node {int(nodes[i])} outside its path")


def _on_path(net: TreeNetwork) -> np.ndarray:
    """``m[n, i]`` is True when node n lies on the path from leaf i to the root."""
    def build():
        m = np.zeros((net.n_nodes, len(net.leaves)), dtype=bool)
        for n, under in enumerate(net.leaves_under):
            m[n, list(under)] = True
        return m
    return net._memo("on_path", build)


def server_depth(net: TreeNetwork, part: CpPlacement) -> np.ndarray:
    """Depth of each leaf/file server; -1 for origin delivery."""
    depth_ext = np.append(net.depth, -1)  # index -1 -> origin
    return depth_ext[part.server]


@dataclass
class CpReport:
    """The per-CP summaries exchanged in each round.

    ``cache[n]`` slots used at node n, ``residual[n]`` traffic on uplink n,
    ``transit[a]`` per-ANO traffic fetched from the origin, ``zeta[a]`` ANO
    share of the CO cache cost, ``utility[a]`` per-ANO utility at fixed prices.
    """

    cp: int
    cache: np.ndarray
    residual: np.ndarray
    transit: np.ndarray
    zeta: np.ndarray
    utility: np.ndarray
    served: np.ndarray  # traffic under each node served at or below it (D_n - Lambda_n)


def residual_traffic(net: TreeNetwork, part: CpPlacement, rates: np.ndarray) -> np.ndarray:
    """Traffic of one CP on every uplink (the root entry is total transit)."""
    sd = server_depth(net, part)
    maxd = int(net.depth.max())
    # per_depth[i, d] = traffic of leaf i whose server sits strictly above depth d
    per_depth = np.empty((len(net.leaves), maxd + 1))
    for d in range(maxd + 1):
        per_depth[:, d] = np.where(sd < d, rates, 0.0).sum(axis=1)
    out = np.zeros(net.n_nodes)
    for n in range(net.n_nodes):
        under = net.leaves_under[n]
        if under:
            out[n] = per_depth[list(under), net.depth[n]].sum()
    return out


def co_shares(net: TreeNetwork, part: CpPlacement, rates: np.ndarray) -> np.ndarray:
    """ANO shares of the CO cache cost: mean over CO-stored files of each ANO's
    fraction of the demand served from the CO. Files serving nobody are split evenly."""
    anos = net.anos
    at_co = np.nonzero(part.stored[ROOT])[0]
    zeta = np.zeros(len(anos))
    if at_co.size == 0:
        return zeta
    from_co = np.where(part.server[:, at_co] == ROOT, rates[:, at_co], 0.0)
    total = from_co.sum(axis=0)
    for j, a in enumerate(anos):
        idx = [net.leaf_index[l] for l in net.leaves_of(a)]
        mine = from_co[idx].sum(axis=0)
        frac = np.divide(mine, total, out=np.full(total.shape, 1.0 / len(anos)), where=total > 0)
        zeta[j] = frac.sum() / at_co.size
    return zeta


def make_report(net: TreeNetwork, demand: DemandModel, part: CpPlacement) -> CpReport:
    rates = demand.leaf_rates(part.cp)
    fs = demand.file_size
    cache = part.stored.sum(axis=1).astype(np.int64)
    residual = residual_traffic(net, part, rates)
    leaf_tot = rates.sum(axis=1)
    below = np.array([leaf_tot[list(net.leaves_under[n])].sum() for n in range(net.n_nodes)])
    served = below - residual
    anos = net.anos
    sd = server_depth(net, part)
    from_origin = np.where(sd < 0, rates, 0.0).sum(axis=1)
    transit = np.array([from_origin[[net.leaf_index[l] for l in net.leaves_of(a)]].sum()
                        for a in anos])
    zeta = co_shares(net, part, rates)
    b = np.asarray(net.uplink_price)
    s = np.asarray(net.storage_price)
    utility = np.zeros(len(anos))
    for j, a in enumerate(anos):
        own = list(net.nodes_of(a))
        a_total = leaf_tot[[net.leaf_index[l] for l in net.leaves_of(a)]].sum()
        utility[j] = ((a_total - transit[j]) * b[ROOT]
                      + float(np.dot(b[own], served[own]))
                      - zeta[j] * cache[ROOT] * s[ROOT] * fs
                      - float(np.dot(s[own], cache[own])) * fs)
    return CpReport(part.cp, cache, residual, transit, zeta, utility, served)


def utility(net: TreeNetwork, demand: DemandModel, placement: Placement) -> float:
    """Savings relative to a cache-less network, at fixed prices.

    Summed file by file: every leaf request served at node n saves the price
    of the path from n to the source; every stored copy costs its storage.
    """
    pp = np.append(net.path_prices, 0.0)  # origin saves nothing
    s = np.asarray(net.storage_price) * demand.file_size
    total = 0.0
    for cp in placement.cps:
        part = placement[cp]
        check_routing(net, part)
        rates = demand.leaf_rates(cp)
        total += float(np.sum(rates * pp[part.server]))
        total -= float(s @ part.stored.sum(axis=1))
    return total


def utility_by_ano(reports: dict[int, CpReport]) -> float:
    """Sum of the per-ANO utilities carried in the reports."""
    total = 0.0
    for cp in sorted(reports):
        total += float(np.sum(reports[cp].utility))
    return total
