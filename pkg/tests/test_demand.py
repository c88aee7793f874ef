from __future__ import annotations

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from cachesub.demand import (Catalog, DemandError, explicit_demand, hit_prob_continuous,
                             hit_prob_exact, merge, synthesize_zipf_demand, zipf_weights)
from cachesub.network import TierSpec, build_symmetric_3tier


@pytest.mark.parametrize("F, alpha", [(10**7, 0.8), (10**5, 0.8), (1000, 0.5)])
def test_zipf_normalizer_against_hurwitz_zeta(F, alpha):
    # sum_{f=1}^{F} f^-a = zeta(a, 1) - zeta(a, F + 1), evaluated independently
    mpmath.mp.dps = 30
    H = mpmath.zeta(alpha, 1) - mpmath.zeta(alpha, F + 1)
    q = zipf_weights(F, alpha)
    assert float(q[0]) == pytest.approx(float(1 / H), rel=1e-9)
    assert float(q[-1]) == pytest.approx(float(mpmath.power(F, -alpha) / H), rel=1e-9)


@given(st.integers(1, 500), st.floats(0.0, 1.5))
def test_zipf_weights_sum_and_order(F, alpha):
    q = zipf_weights(F, alpha)
    assert q.sum() == pytest.approx(1.0, rel=1e-12)
    assert np.all(np.diff(q) <= 0)


def test_hit_probabilities():
    q = zipf_weights(100, 0.8)
    assert hit_prob_exact(q, 0) == 0.0
    assert hit_prob_exact(q, 100) == pytest.approx(1.0)
    assert hit_prob_exact(q[::-1], 3) == pytest.approx(q[:3].sum())
    assert hit_prob_continuous(1e3, 1e4, 0.8) == pytest.approx(0.1 ** 0.2)
    assert hit_prob_continuous(2e4, 1e4, 0.8) == 1.0
    with pytest.raises(DemandError):
        hit_prob_exact(q, 101)


def test_zipf_demand_split_over_leaves():
    net = build_symmetric_3tier(2, 3, TierSpec(), n_anos=2)
    dem = synthesize_zipf_demand(net, Catalog(1, 50, 1e-3), {0: 60.0, 1: 30.0}, 0.8, True, seed=4)
    rates = dem.leaf_rates(1)
    assert rates.shape == (12, 50)
    assert rates.sum() == pytest.approx(90.0)
    assert dem.leaf_totals(1).sum() == pytest.approx(90.0)
    # ANO 0 keeps catalog order, ANO 1 is permuted
    assert np.all(np.diff(dem.ano_profile(1, 0)) <= 0)
    assert not np.all(np.diff(dem.ano_profile(1, 1)) <= 0)
    again = synthesize_zipf_demand(net, Catalog(1, 50, 1e-3), {0: 60.0, 1: 30.0}, 0.8, True, seed=4)
    assert np.array_equal(again.leaf_rates(1), rates)


def test_explicit_and_merge():
    net = build_symmetric_3tier(1, 2, TierSpec())
    leaves = net.leaves
    a = explicit_demand(net, {1: Catalog(1, 2, 1.0)}, [(leaves[0], 1, 0, 2.0), (leaves[1], 1, 1, 1.0)])
    b = explicit_demand(net, {2: Catalog(2, 1, 1.0)}, [(leaves[1], 2, 0, 5.0)])
    m = merge([a, b])
    assert m.cps == (1, 2)
    assert m.leaf_rates(2)[1, 0] == 5.0
    with pytest.raises(DemandError):
        explicit_demand(net, {1: Catalog(1, 2, 1.0)}, [(0, 1, 0, 1.0)])  # root is not a leaf
    with pytest.raises(DemandError):
        merge([a, a])
