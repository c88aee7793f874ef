from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from cachesub.network import (ROOT, NetworkError, TierSpec, TreeNetwork, build_symmetric_3tier,
                              path_price, validate)


def small_tree():
    # 0 <- 1 <- {2, 3}; 0 <- 4
    return TreeNetwork.from_lists([-1, 0, 1, 1, 0], [0.5, 0.3, 0.0, 0.0, 0.1],
                                  [4.0, 1.0, 0.5, 0.0, 2.0], ano_of=[None, 0, 0, 0, 1])


def test_structure():
    net = small_tree()
    assert net.children[0] == (1, 4)
    assert net.leaves == (2, 3, 4)
    assert net.ancestors(2) == (1, 0)
    assert net.path_to_root(2) == (2, 1, 0)
    assert list(net.depth) == [0, 1, 2, 2, 1]
    assert net.anos == (0, 1)
    assert net.nodes_of(0) == (1, 2, 3)
    assert net.leaves_of(1) == (4,)
    assert validate(net) == []


def test_path_price_sums_uplinks_including_transit():
    net = small_tree()
    assert path_price(net, 2) == pytest.approx(0.5 + 1.0 + 4.0)
    assert net.path_prices[4] == pytest.approx(2.0 + 4.0)


def test_invalid_inputs_detected():
    with pytest.raises(NetworkError):
        TreeNetwork.from_lists([-1, 0], [0.0], [1.0, 1.0])
    cyc = TreeNetwork.from_lists([-1, 2, 1], [0, 0, 0], [1, 1, 1])
    assert validate(cyc)
    neg = TreeNetwork.from_lists([-1, 0], [0.0, -1.0], [1.0, 1.0])
    assert validate(neg)


def test_storage_cap_in_slots():
    net = TreeNetwork.from_lists([-1, 0], [0, 0], [1, 0], storage_cap=[None, 0.0025])
    assert net.storage_cap_files(1e-3) == [None, 2]


@given(st.integers(1, 6), st.integers(1, 4), st.integers(1, 3))
def test_symmetric_counts(e1, e2, n_anos):
    net = build_symmetric_3tier(e1, e2, TierSpec(), n_anos=n_anos)
    assert net.n_nodes == 1 + n_anos * e2 * (1 + e1)
    assert len(net.leaves) == n_anos * e1 * e2
    assert net.parent[ROOT] == -1
    assert validate(net) == []
    for a in net.anos:
        assert len(net.leaves_of(a)) == e1 * e2


def test_symmetric_tier_parameters():
    spec = TierSpec(storage_price=(0.0, 0.03, 0.05), uplink_price=(0.0, 1.0, 4.0),
                    storage_cap=(0.2, None, None), uplink_cap=(22.0, 150.0, None))
    net = build_symmetric_3tier(2, 2, spec)
    assert net.storage_price[ROOT] == 0.05 and net.uplink_price[ROOT] == 4.0
    assert net.uplink_cap[1] == 150.0 and net.storage_cap[1] is None
    leaf = net.leaves[0]
    assert net.storage_cap[leaf] == 0.2 and net.uplink_cap[leaf] == 22.0
