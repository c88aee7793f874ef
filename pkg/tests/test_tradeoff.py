from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cachesub.tradeoff import (ALL_TIERS, DegeneratePricingError, TierParams, TradeoffError,
                               network_cost, numerical_tier_sizes, optimal_tier_sizes,
                               parse_subset, savings_curve, subset_label)


def test_no_cache_costs_the_baseline():
    p = TierParams()
    assert network_cost(p, 0.0, 0.0, 0.0) == pytest.approx(p.T * sum(p.b))


def test_gamma_rescaling():
    p = TierParams().with_gamma(133.0)
    assert p.gamma == pytest.approx(133.0)


@given(st.floats(-1.0, 3.0), st.sampled_from([(100, 10), (10, 100)]),
       st.sampled_from([frozenset({1}), frozenset({1, 2}), frozenset({1, 3}), ALL_TIERS]))
def test_closed_form_not_beaten_by_numerical(log_gamma, fan, tiers):
    p = replace(TierParams(e1=fan[0], e2=fan[1]).with_gamma(10 ** log_gamma), enabled_tiers=tiers)
    exact = optimal_tier_sizes(p)
    assert exact.total_cost <= numerical_tier_sizes(p).total_cost * (1 + 1e-9)
    assert 0.0 <= exact.saving_fraction < 1.0
    for t in (1, 2, 3):
        if t not in tiers:
            assert getattr(exact, f"C{t}") == 0.0


def test_savings_grow_with_gamma():
    rows = savings_curve(TierParams(), np.logspace(-1, 3, 9), subsets=[ALL_TIERS])
    sav = [r["saving_fraction"] for r in rows]
    assert all(b >= a for a, b in zip(sav, sav[1:]))


def test_more_tiers_never_hurt():
    p = TierParams(e1=10, e2=100).with_gamma(30.0)
    s1 = optimal_tier_sizes(replace(p, enabled_tiers=frozenset({1}))).saving_fraction
    s12 = optimal_tier_sizes(replace(p, enabled_tiers=frozenset({1, 2}))).saving_fraction
    s123 = optimal_tier_sizes(p).saving_fraction
    assert s1 <= s12 + 1e-12 <= s123 + 2e-12


def test_degenerate_pricing():
    # a tier-2 copy costs more than the e1 leaf copies it replaces
    p = TierParams(s=(0.03, 5.0, 0.03))
    with pytest.raises(DegeneratePricingError):
        optimal_tier_sizes(p)
    sol = optimal_tier_sizes(p, allow_degenerate=True)
    assert sol.degenerate


def test_validation_and_labels():
    with pytest.raises(TradeoffError):
        TierParams(alpha=1.0)
    with pytest.raises(TradeoffError):
        TierParams(s=(-1, 0, 0))
    assert subset_label(frozenset({3, 1})) == "1+3"
    assert parse_subset("1+2+3") == ALL_TIERS
    with pytest.raises(TradeoffError):
        parse_subset("4")
