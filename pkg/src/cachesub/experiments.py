"""Capacity sweeps of the constrained optimizer on a symmetric two-ANO network.

Two ANOs share a CO; each owns ``e2`` intermediate nodes with ``e1`` leaves.
Two CPs with equal Zipf catalogs have the same per-leaf demand ratio in both
ANOs (CP 2 twice CP 1). Leaf resources and intermediate uplinks are sunk and
capacity limited; everything else is bought at fixed prices. One capacity is swept while the others are held.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional

import numpy as np

from .demand import Catalog, DemandModel, merge, synthesize_zipf_demand
from .lagrangian import AlgoParams, OptimizationResult, orchestrate, settle
from .network import TierSpec, TreeNetwork, build_symmetric_3tier


@dataclass(frozen=True)
class SweepParams:
    e1: int = 10
    e2: int = 5
    n_anos: int = 2
    F: int = 10**4
    file_size: float = 1e-3              # GB
    alpha: float = 0.8
    per_leaf: tuple = (10.0, 20.0)       # Mb/s per leaf for CP 1, CP 2
    b0: float = 4.0                      # transit, $/(Mb/s)/month
    s_int: float = 0.03                  # intermediate storage, $/GB/month
    s0: float = 0.03                     # CO storage, $/GB/month
    leaf_storage: float = 0.2            # GB
    leaf_uplink: float = 22.0            # Mb/s
    int_uplink: Optional[float] = None   # Mb/s; swept
    share: float = 0.5
    algo: AlgoParams = field(default=AlgoParams(eps_rel=1e-9, tau_max=40))


DEFAULT_INT_UPLINK_GRID = (100.0, 130.0, 160.0, 190.0, 400.0)


def sweep_network(p: SweepParams) -> TreeNetwork:
    spec = TierSpec(storage_price=(0.0, p.s_int, p.s0), uplink_price=(0.0, 0.0, p.b0),
                    storage_cap=(p.leaf_storage, None, None),
                    uplink_cap=(p.leaf_uplink, p.int_uplink, None))
    return build_symmetric_3tier(p.e1, p.e2, spec, n_anos=p.n_anos)


def sweep_demand(net: TreeNetwork, p: SweepParams) -> DemandModel:
    models = []
    for cp, rate in enumerate(p.per_leaf, start=1):
        totals = {a: rate * len(net.leaves_of(a)) for a in net.anos}
        models.append(synthesize_zipf_demand(net, Catalog(cp, p.F, p.file_size), totals,
                                             p.alpha, False, cp))
    return merge(models)


def _intermediates(net: TreeNetwork) -> list:
    return [n for n in range(net.n_nodes) if net.parent[n] == 0]


def summarize(net: TreeNetwork, demand: DemandModel, result: OptimizationResult,
              shares: Mapping[tuple, float]) -> dict:
    """One output row: bounds, mean shadow prices, subsidies and ANO utilities."""
    ints = _intermediates(net)
    leaves = list(net.leaves)
    row = {"status": result.status, "iterations": result.iterations, "LB": result.LB,
           "UB": result.UB, "utility": result.utility,
           "beta_int": float(np.mean(result.ub_beta[ints])) if ints else math.nan,
           "beta_int_last": float(np.mean(result.beta[ints])) if ints else math.nan,
           "beta_leaf": float(np.mean(result.ub_beta[leaves])),
           "sigma_leaf": float(np.mean(result.ub_sigma[leaves]))}
    if result.reports is None:
        return row
    st = settle(net, demand.file_size, result.reports, result.beta, result.sigma, shares)
    for cp, v in sorted(st.subsidy_by_cp().items()):
        row[f"subsidy_cp{cp}"] = v
    for j, a in enumerate(net.anos):
        u_a = math.fsum(float(r.utility[j]) for r in result.reports.values())
        paid = math.fsum(r.subsidy for r in st.rows if r.ano == a)
        row[f"ano{a}_net"] = u_a - paid
    return row


def int_uplink_point(p: SweepParams, value: Optional[float]) -> dict:
    q = replace(p, int_uplink=value)
    net = sweep_network(q)
    demand = sweep_demand(net, q)
    result = orchestrate(net, demand, q.algo)
    shares = {(a, cp): q.share for a in net.anos for cp in demand.cps}
    return {"int_uplink": math.inf if value is None else value,
            **summarize(net, demand, result, shares)}


def int_uplink_sweep(p: SweepParams = SweepParams(), grid=DEFAULT_INT_UPLINK_GRID,
                     workers: int = 1) -> list[dict]:
    """Rows in grid order; points run in separate processes when ``workers > 1``."""
    grid = list(grid)
    if workers <= 1:
        return [int_uplink_point(p, v) for v in grid]
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(workers) as pool:
        return list(pool.map(int_uplink_point, [p] * len(grid), grid))
