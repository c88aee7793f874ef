"""Uncapacitated facility location on a tree, one content at a time.

Requests at a node are served by the nearest open node on its path to the
root, or by the origin above the root. The solver is a bottom-up dynamic
program whose state is the nearest open strict ancestor; it is vectorised over
a batch of contents that share the same prices, so a whole catalog is placed
in one pass over the tree.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .demand import DemandModel
from .network import ROOT, TreeNetwork
from .placement import ORIGIN, CpPlacement, nearest_servers

BRUTE_FORCE_MAX_NODES = 20


class UflError(ValueError):
    pass


@dataclass(frozen=True)
class UflInstance:
    net: TreeNetwork
    open_cost: np.ndarray  # per node, cost of storing the content there
    link_cost: np.ndarray  # per node, unit price of its uplink (root: transit)
    demand: np.ndarray     # per node request rate (normally non-zero at leaves only)

    def __post_init__(self):
        n = self.net.n_nodes
        for name in ("open_cost", "link_cost", "demand"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (n,):
                raise UflError(f"{name} must have one entry per node")
            if np.any(arr < 0) or np.any(np.isnan(arr)):
                raise UflError(f"{name} must be >= 0")
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class UflSolution:
    open_nodes: frozenset
    serving: dict  # node with demand -> serving node or ORIGIN
    cost: float


def _paths(net: TreeNetwork, link_cost: np.ndarray):
    """Per node: cumulative link cost from the node up to each strict ancestor and the origin."""
    out = []
    for n in range(net.n_nodes):
        path = net.path_to_root(n)
        out.append(np.cumsum(link_cost[list(path)]))
    return out


def solve_ufl_batch(net: TreeNetwork, open_cost: np.ndarray, link_cost: np.ndarray,
                    demand: np.ndarray) -> np.ndarray:
    """Optimal open sets for a batch of contents sharing prices.

    Parameters
    ----------
    open_cost, link_cost : array, shape (n_nodes,)
    demand : array, shape (n_nodes, n_contents)

    Returns
    -------
    stored : bool array, shape (n_nodes, n_contents)

    Ties between opening and not opening a node resolve to not opening.
    """
    open_cost = np.asarray(open_cost, dtype=np.float64)
    link_cost = np.asarray(link_cost, dtype=np.float64)
    demand = np.asarray(demand, dtype=np.float64)
    n_items = demand.shape[1]
    dist = _paths(net, link_cost)
    g: dict[int, np.ndarray] = {}
    decide: dict[int, np.ndarray] = {}
    for v in reversed(net.order):
        kids = net.children[v]
        open_v = np.full(n_items, open_cost[v])
        closed = dist[v][:, None] * demand[v][None, :]
        for c in kids:
            gc = g.pop(c)
            open_v = open_v + gc[0]
            closed += gc[1:]
        choose = open_v[None, :] < closed
        decide[v] = choose
        g[v] = np.where(choose, open_v[None, :], closed)
    stored = np.zeros((net.n_nodes, n_items), dtype=bool)
    state = {ROOT: np.zeros(n_items, dtype=np.int64)}
    cols = np.arange(n_items)
    for v in net.order:
        st = state.pop(v)
        is_open = decide[v][st, cols]
        stored[v] = is_open
        for c in net.children[v]:
            state[c] = np.where(is_open, 0, st + 1)
    return stored


def assignment_cost(inst: UflInstance, open_nodes) -> tuple[float, dict]:
    """Cost of an open set with nearest-open-ancestor service, plus the serving map."""
    net = inst.net
    open_set = set(int(n) for n in open_nodes)
    cost = 0.0
    for n in sorted(open_set):
        cost += inst.open_cost[n]
    serving = {}
    for v in range(net.n_nodes):
        if inst.demand[v] == 0 and v not in net.leaves:
            continue
        travelled, server = 0.0, ORIGIN
        for m in net.path_to_root(v):
            if m in open_set:
                server = m
                break
            travelled += inst.link_cost[m]
        serving[v] = server
        if inst.demand[v] > 0:
            cost += inst.demand[v] * travelled
    return cost, serving


def solve_ufl(inst: UflInstance) -> UflSolution:
    stored = solve_ufl_batch(inst.net, inst.open_cost, inst.link_cost, inst.demand[:, None])
    open_nodes = frozenset(int(n) for n in np.nonzero(stored[:, 0])[0])
    cost, serving = assignment_cost(inst, open_nodes)
    return UflSolution(open_nodes, serving, cost)


def brute_force_ufl(inst: UflInstance, chunk: int = 1 << 14) -> UflSolution:
    """Exhaustive search over all 2^N open sets (N <= 20).

    Ties are broken by fewest open nodes, then by smallest bitmask.
    """
    net = inst.net
    n = net.n_nodes
    if n > BRUTE_FORCE_MAX_NODES:
        raise UflError(f"brute force refuses {n} nodes (max {BRUTE_FORCE_MAX_NODES})")
    clients = [v for v in range(n) if inst.demand[v] > 0]
    # far[v, m] = link cost from v up to m (exclusive) if m is on v's path, else inf
    far = np.full((len(clients), n), np.inf)
    to_origin = np.zeros(len(clients))
    for i, v in enumerate(clients):
        travelled = 0.0
        for m in net.path_to_root(v):
            far[i, m] = travelled
            travelled += inst.link_cost[m]
        to_origin[i] = travelled
    bits = 1 << np.arange(n)
    best = (np.inf, n + 1, -1)
    for lo in range(0, 1 << n, chunk):
        masks = np.arange(lo, min(lo + chunk, 1 << n))
        member = (masks[:, None] & bits[None, :]) != 0
        cost = np.where(member, inst.open_cost[None, :], 0.0).sum(axis=1)
        for i in range(len(clients)):
            d = np.where(member, far[i][None, :], np.inf).min(axis=1)
            cost = cost + inst.demand[clients[i]] * np.minimum(d, to_origin[i])
        size = member.sum(axis=1)
        order = np.lexsort((masks, size, cost))
        j = order[0]
        cand = (cost[j], int(size[j]), int(masks[j]))
        if cand < best:
            best = cand
    mask = best[2]
    open_nodes = frozenset(v for v in range(n) if mask >> v & 1)
    cost, serving = assignment_cost(inst, open_nodes)
    return UflSolution(open_nodes, serving, cost)


@dataclass(frozen=True)
class Prices:
    """Per-content storage cost and per-unit link price seen by the CPs."""

    open_cost: np.ndarray
    link_cost: np.ndarray


def effective_prices(net: TreeNetwork, file_size: float, sigma: Optional[np.ndarray] = None,
                     beta: Optional[np.ndarray] = None) -> Prices:
    """Fixed prices plus shadow prices: ``(s_n + sigma_n) * file_size`` and ``b_n + beta_n``."""
    open_cost = np.asarray(net.storage_price) * file_size
    link_cost = np.asarray(net.uplink_price, dtype=np.float64)
    if sigma is not None:
        open_cost = open_cost + np.asarray(sigma) * file_size
    if beta is not None:
        link_cost = link_cost + beta
    return Prices(open_cost, link_cost)


def node_demand(net: TreeNetwork, leaf_rates: np.ndarray) -> np.ndarray:
    out = np.zeros((net.n_nodes, leaf_rates.shape[1]))
    out[list(net.leaves)] = leaf_rates
    return out


def place_catalog(net: TreeNetwork, demand: DemandModel, cp: int, prices: Prices,
                  early_stop: bool = False, chunk: int = 4096) -> CpPlacement:
    """Place every content of ``cp`` independently by solving its UFL instance.

    With ``early_stop`` contents are visited in decreasing total demand and any
    content whose per-leaf demand is dominated by an earlier content that was
    refused at every node is skipped (it cannot be placed either).
    """
    rates = demand.leaf_rates(cp)
    per_node = node_demand(net, rates)
    if not early_stop:
        stored = solve_ufl_batch(net, prices.open_cost, prices.link_cost, per_node)
    else:
        stored = _place_early_stop(net, prices, rates, per_node, chunk)
    server = nearest_servers(net, stored)
    return CpPlacement(cp, stored, server[list(net.leaves)])


def _place_early_stop(net, prices, rates, per_node, chunk):
    n_files = rates.shape[1]
    stored = np.zeros((net.n_nodes, n_files), dtype=bool)
    order = np.argsort(-rates.sum(axis=0), kind="stable")
    pending = order
    refused = None
    while pending.size:
        batch, pending = pending[:chunk], pending[chunk:]
        got = solve_ufl_batch(net, prices.open_cost, prices.link_cost, per_node[:, batch])
        stored[:, batch] = got
        if refused is None:
            empty = np.nonzero(~got.any(axis=0))[0]
            if empty.size:
                refused = rates[:, batch[empty[0]]]
        if refused is not None and pending.size:
            dominated = np.all(rates[:, pending] <= refused[:, None], axis=0)
            pending = pending[~dominated]
    return stored
