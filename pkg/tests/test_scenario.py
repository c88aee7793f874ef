from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from cachesub.scenario import ScenarioError, load_scenario, parse_scenario

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


@pytest.mark.parametrize("name", sorted(p.name for p in SCENARIOS.glob("*.yaml")))
def test_shipped_scenarios_parse(name):
    sc = load_scenario(SCENARIOS / name)
    assert len(sc.sha256) == 64


def test_toy_scenario_contents():
    sc = load_scenario(SCENARIOS / "toy.yaml")
    assert sc.network.n_nodes == 4 and sc.network.leaves == (2, 3)
    assert sc.demand.cps == (1, 2)
    assert sc.demand.leaf_rates(1)[0].tolist() == [3.0, 1.0, 0.0]
    assert sc.shares[(0, 2)] == 0.3 and sc.shares[(0, 1)] == 0.5


def test_capacity_sweep_rebuilds_network():
    sc = load_scenario(SCENARIOS / "capacity_sweep.yaml")
    assert [v for _, v in sc.sweep.points()] == [100.0, 130.0, 160.0, 190.0, 400.0]
    capped = sc.with_tier_cap(2, "uplink_cap", 130.0)
    ints = [n for n in range(capped.network.n_nodes) if capped.network.parent[n] == 0]
    assert all(capped.network.uplink_cap[n] == 130.0 for n in ints)
    assert capped.demand.leaf_totals(2).sum() == pytest.approx(2000.0)


def test_seed_override_changes_permutation():
    text = """
schema_version: 1
network:
  symmetric: {e1: 1, e2: 1, n_anos: 2, storage_price: [0, 0, 0], uplink_price: [0, 0, 1],
              storage_cap: [null, null, null], uplink_cap: [null, null, null]}
demand:
  file_size_gb: 1.0
  cps:
    - {id: 1, files: 30, zipf: {alpha: 0.8, per_ano_total: {0: 1.0, 1: 1.0}, permute_per_ano: true}}
"""
    a, b = parse_scenario(text, seed=1), parse_scenario(text, seed=2)
    assert not np.array_equal(a.demand.ano_profile(1, 1), b.demand.ano_profile(1, 1))
    assert np.array_equal(a.demand.ano_profile(1, 0), b.demand.ano_profile(1, 0))


def test_diagnostics_name_field_and_line():
    text = """schema_version: 1
tradeoff:
  e1: 100
  e2: -3
  F: 10000
  alpha: 0.8
  s: [0.03, 0.03]
  b: [4, 4, 4]
  gamma_grid: [1, 10]
  colour: blue
"""
    with pytest.raises(ScenarioError) as err:
        parse_scenario(text)
    diags = {d["field"]: d for d in err.value.diagnostics}
    assert diags["tradeoff.e2"]["line"] == 4
    assert "tradeoff.s" in diags
    assert diags["tradeoff.colour"]["line"] == 10


@pytest.mark.parametrize("text", ["schema_version: 2\n", "[1, 2]\n", "schema_version: 1\nnope: 1\n",
                                  "a: [\n"])
def test_rejects_bad_documents(text):
    with pytest.raises(ScenarioError):
        parse_scenario(text)
