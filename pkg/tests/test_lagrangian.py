from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cachesub.coalition import CoGameInstance, eta_distribution, optimal_set
from cachesub.demand import Catalog, DemandModel, explicit_demand
from cachesub.ilp_oracle import brute_force_ilp, random_feasible_toys, random_toy
from cachesub.lagrangian import (AlgoParams, Measurement, OptimizationError, ZeroSubgradient,
                                 is_feasible, lagrangian, orchestrate, polyak_step,
                                 project_to_feasible, settle)
from cachesub.network import ROOT, TierSpec, TreeNetwork, build_symmetric_3tier
from cachesub.placement import (CpPlacement, Placement, make_report, nearest_servers, utility,
                                utility_by_ano)
from cachesub.projection import Capacities


@pytest.fixture(scope="module")
def toys():
    return random_feasible_toys(7, 12)


def test_weak_duality_and_monotone_bounds(toys):
    for net, dem, opt in toys:
        res = orchestrate(net, dem, AlgoParams(tau_max=60))
        ub = [r.UB for r in res.trace]
        lb = [r.LB for r in res.trace]
        assert all(r.L >= opt.utility - 1e-9 for r in res.trace)
        assert all(u >= opt.utility - 1e-9 for u in ub)
        assert all(l <= opt.utility + 1e-9 for l in lb)
        assert all(b <= a for a, b in zip(ub, ub[1:]))
        assert all(b >= a for a, b in zip(lb, lb[1:]))


def test_emitted_placement_is_feasible(toys):
    for net, dem, opt in toys:
        res = orchestrate(net, dem, AlgoParams(tau_max=60))
        caps = Capacities.of(net, dem.file_size)
        reports = {cp: make_report(net, dem, res.placement[cp]) for cp in res.placement.cps}
        assert is_feasible(caps, reports)
        assert utility(net, dem, res.placement) == pytest.approx(res.utility, abs=1e-9)


def test_lagrangian_bounds_oracle_at_any_duals():
    rng = np.random.Generator(np.random.PCG64(11))
    for _ in range(8):
        net, dem = random_toy(rng)
        opt = brute_force_ilp(net, dem)
        if not opt.feasible:
            continue
        beta, sigma = rng.uniform(0, 3, net.n_nodes), rng.uniform(0, 3, net.n_nodes)
        from cachesub.lagrangian import primal_update
        parts = {cp: primal_update(cp, beta, sigma, net, dem)[0] for cp in dem.cps}
        assert lagrangian(Placement(parts), beta, sigma, net, dem) >= opt.utility - 1e-9


@given(st.integers(0, 10_000))
def test_utility_decomposition(seed):
    rng = np.random.Generator(np.random.PCG64(seed))
    net, dem = random_toy(rng)
    parts = {}
    for cp in dem.cps:
        stored = rng.random((net.n_nodes, dem.catalogs[cp].size_files)) < 0.4
        parts[cp] = CpPlacement(cp, stored, nearest_servers(net, stored)[list(net.leaves)])
    reports = {cp: make_report(net, dem, parts[cp]) for cp in parts}
    total = utility(net, dem, Placement(parts))
    assert utility_by_ano(reports) == pytest.approx(total, rel=1e-9, abs=1e-9)
    for r in reports.values():
        if r.cache[ROOT] > 0:
            assert r.zeta.sum() == pytest.approx(1.0)


def test_uncapacitated_stops_in_one_round():
    net = build_symmetric_3tier(2, 2, TierSpec(storage_price=(0.5, 0.1, 0.05)))
    dem = explicit_demand(net, {1: Catalog(1, 3, 1.0)},
                          [(l, 1, f, 1.0 + f) for l in net.leaves for f in range(3)])
    res = orchestrate(net, dem)
    assert res.iterations == 1 and res.stop_reason == "gap"
    assert res.LB == res.UB == res.utility


def test_projection_keeps_feasible_and_evicts_weaker_file():
    net = TreeNetwork.from_lists([-1, 0], [0.0, 0.0], [4.0, 0.0], storage_cap=[None, 1.0],
                                 ano_of=[None, 0])
    dem = explicit_demand(net, {1: Catalog(1, 2, 1.0)}, [(1, 1, 0, 3.0), (1, 1, 1, 1.0)])
    both = np.array([[False, False], [True, True]])
    pl = Placement({1: CpPlacement(1, both, nearest_servers(net, both)[[1]])})
    fixed = project_to_feasible(net, dem, pl)
    assert fixed[1].stored[1].tolist() == [True, False]
    assert project_to_feasible(net, dem, fixed) is fixed


def test_projection_never_beats_oracle():
    rng = np.random.Generator(np.random.PCG64(5))
    checked = 0
    while checked < 15:
        net, dem = random_toy(rng)
        opt = brute_force_ilp(net, dem)
        if not opt.feasible:
            continue
        parts = {cp: CpPlacement(cp, np.ones((net.n_nodes, dem.catalogs[cp].size_files), bool),
                                 np.zeros((len(net.leaves), dem.catalogs[cp].size_files), int))
                 for cp in dem.cps}
        for cp, p in parts.items():
            p.server[:] = nearest_servers(net, p.stored)[list(net.leaves)]
        out = project_to_feasible(net, dem, Placement(parts))
        if out is not None:
            caps = Capacities.of(net, dem.file_size)
            assert is_feasible(caps, {cp: make_report(net, dem, out[cp]) for cp in out.cps})
            assert utility(net, dem, out) <= opt.utility + 1e-9
        checked += 1


def _sunk_three_tier():
    # two ANOs, each an intermediate node with two leaves; leaves and
    # intermediate uplinks are sunk (price 0, capacity limited)
    spec = TierSpec(storage_price=(0.0, 0.2, 0.1), uplink_price=(0.0, 0.0, 4.0),
                    storage_cap=(2.0, None, None), uplink_cap=(12.0, 20.0, None))
    net = build_symmetric_3tier(2, 1, spec, n_anos=2)
    rng = np.random.Generator(np.random.PCG64(21))
    rows = [(l, cp, f, float(rng.integers(0, 4))) for l in net.leaves for cp in (1, 2)
            for f in range(4)]
    return net, explicit_demand(net, {1: Catalog(1, 4, 0.5), 2: Catalog(2, 4, 0.5)}, rows)


def test_settlement_matches_literal_formula():
    net, dem = _sunk_three_tier()
    res = orchestrate(net, dem, AlgoParams(tau_max=30))
    rng = np.random.Generator(np.random.PCG64(2))
    beta = np.where(np.isfinite(Capacities.of(net, 1.0).uplink), rng.uniform(0, 2, net.n_nodes), 0)
    sigma = np.where(np.isfinite(Capacities.of(net, 1.0).storage), rng.uniform(0, 2, net.n_nodes), 0)
    shares = {(a, cp): 0.25 + 0.5 * cp / 3 for a in net.anos for cp in dem.cps}
    st = settle(net, dem.file_size, res.reports, beta, sigma, shares)
    fs, b0 = dem.file_size, net.uplink_price[ROOT]
    s = np.asarray(net.storage_price)
    for cp, rep in res.reports.items():
        T = dict(zip(net.leaves, dem.leaf_totals(cp)))
        C = rep.cache * fs  # GB reserved
        for j, a in enumerate(net.anos):
            leaves = net.leaves_of(a)
            inter = [n for n in net.nodes_of(a) if n not in leaves]
            literal = (sum(T[l] * (beta[l] + beta[net.parent[l]] + b0) for l in leaves)
                       - sum(rep.residual[n] * beta[n] for n in net.nodes_of(a))
                       - rep.transit[j] * b0
                       - sum(C[l] * sigma[l] for l in leaves)
                       - sum(C[i] * s[i] for i in inter)
                       - rep.zeta[j] * C[ROOT] * s[ROOT])
            row = st.row(a, cp)
            assert row.saving == pytest.approx(literal, rel=1e-12, abs=1e-12)
            assert row.subsidy == pytest.approx(shares[(a, cp)] * literal, rel=1e-12, abs=1e-12)


def test_settlement_reduces_to_eta_ledger_for_co_cache():
    # each ANO is one leaf directly under the CO; leaf storage is too dear to use
    net = TreeNetwork.from_lists([-1, 0, 0, 0], [0.03, 1e6, 1e6, 1e6], [4.0, 0.0, 0.0, 0.0],
                                 ano_of=[None, 0, 1, 2])
    rng = np.random.Generator(np.random.PCG64(9))
    lam = rng.uniform(0, 1e-5, (3, 40))
    fs = 1e-3
    dem = DemandModel(net, {1: Catalog(1, 40, fs)}, tables={1: lam})
    res = orchestrate(net, dem)
    st = settle(net, fs, res.reports, res.beta, res.sigma, {(a, 1): 0.5 for a in net.anos})
    g = CoGameInstance(lam, 0.03 * fs, 4.0)
    assert np.array_equal(np.nonzero(res.placement[1].stored[ROOT])[0], optimal_set(g))
    ledger = eta_distribution(g, optimal_set(g))
    for a in net.anos:
        assert st.row(a, 1).saving == pytest.approx(ledger.phi[a], rel=1e-9)
        assert st.row(a, 1).subsidy == pytest.approx(ledger.subsidy[a], rel=1e-9)


def test_settlement_edge_cases():
    net, dem = _sunk_three_tier()
    res = orchestrate(net, dem, AlgoParams(tau_max=10))
    zero = settle(net, dem.file_size, res.reports, res.beta, res.sigma, {})
    assert all(r.subsidy == 0 for r in zero.rows)
    m = Measurement.from_reports(net, res.reports)
    m.transit[1][0] = -1.0
    with pytest.raises(OptimizationError):
        settle(net, dem.file_size, res.reports, res.beta, res.sigma, {}, m)


def test_polyak_step_and_params():
    assert polyak_step(0.5, 10.0, 6.0, 4.0) == pytest.approx(0.5)
    with pytest.raises(ZeroSubgradient):
        polyak_step(1.0, 1.0, 0.0, 0.0)
    with pytest.raises(OptimizationError):
        AlgoParams(tau_max=0)
    net = TreeNetwork.from_lists([-1, 0], [0, 0], [1, 0], storage_cap=[1.0, None])
    with pytest.raises(OptimizationError):
        orchestrate(net, DemandModel(net, {1: Catalog(1, 1, 1.0)}, tables={1: np.ones((1, 1))}))
