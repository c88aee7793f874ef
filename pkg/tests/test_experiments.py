from __future__ import annotations

import math

import pytest

from cachesub.experiments import SweepParams, int_uplink_point, sweep_demand, sweep_network
from cachesub.lagrangian import AlgoParams


def small():
    return SweepParams(e1=2, e2=2, F=300, per_leaf=(0.5, 1.0), leaf_uplink=1.2,
                       leaf_storage=0.01, algo=AlgoParams(eps_rel=1e-6, tau_max=15))


def test_sweep_instance_shape():
    p = small()
    net = sweep_network(p)
    dem = sweep_demand(net, p)
    assert len(net.leaves) == p.e1 * p.e2 * p.n_anos
    assert dem.leaf_totals(2).sum() == pytest.approx(2 * dem.leaf_totals(1).sum())


def test_sweep_point_summary():
    row = int_uplink_point(small(), None)
    assert row["int_uplink"] == math.inf
    assert row["beta_int"] == 0.0  # nothing to price on an uncapped uplink
    assert row["LB"] <= row["UB"]
    if "subsidy_cp1" in row:
        assert row["subsidy_cp2"] >= 0 and row["subsidy_cp1"] >= 0
