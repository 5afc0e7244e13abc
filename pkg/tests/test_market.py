import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conerisk.market import (BidAsk, ConeMarket, MarketError, RegionMarket, cone_from_bid_ask,
                             dual_slack, frictionless, in_cone, in_dual_cone, k_norm,
                             region_from_bid_ask, robust_na_check, support_sigma, validate_market)
from conerisk.models import (model_a, model_b, one_period_tree, random_cone_market,
                             random_quotes, random_region_market, random_tree)
from conerisk.tree import MeasureQ


def _one_node_cone(bid, ask):
    tree = one_period_tree()
    return cone_from_bid_ask(tree, [BidAsk([bid], [ask])] * tree.n_nodes)


def test_zero_spread_generators():
    G = BidAsk([1.0], [1.0]).generators()
    assert {tuple(g) for g in G} == {(1, 0), (0, 1), (1, -1), (-1, 1)}


def test_bid_ask_generators():
    G = BidAsk([0.9], [1.1]).generators()
    assert {tuple(np.round(g, 12)) for g in G} == {(1, 0), (0, 1), (1.1, -1), (-0.9, 1)}


def test_sum_of_generators_is_in_cone():
    m = _one_node_cone(0.9, 1.1)
    assert in_cone([0.2, 0.0], m, 0)
    assert not in_cone([-0.2, 0.0], m, 0)


@pytest.mark.parametrize("w, inside", [((1, 1), True), ((1, 2), False), ((0, 0), True)])
def test_frictionless_dual_is_a_ray(w, inside):
    assert in_dual_cone(w, _one_node_cone(1.0, 1.0), 0) is inside


@pytest.mark.parametrize("s", np.linspace(0.7, 1.3, 25))
def test_bid_ask_dual_interval(s):
    assert in_dual_cone([1.0, s], _one_node_cone(0.9, 1.1), 0) is bool(0.9 - 1e-12 <= s <= 1.1 + 1e-12)


def test_quote_validation():
    with pytest.raises(MarketError):
        BidAsk([1.1], [0.9])
    with pytest.raises(MarketError):
        BidAsk([0.0], [1.0])


def test_k_norm_examples(mA):
    tree = mA.tree
    e2 = np.tile([0.0, 1.0], (tree.n_leaves, 1))
    assert k_norm(e2, 0, mA, trade_from=1)[0] == pytest.approx(2.0)
    assert k_norm(e2, 0, mA)[0] == pytest.approx(1.0)
    cash = np.tile([-3.0, 0.0], (tree.n_leaves, 1))
    assert k_norm(cash, 0, mA)[0] == pytest.approx(3.0)
    assert k_norm(np.zeros_like(e2), 0, mA)[0] == pytest.approx(0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(-3, 3))
def test_k_norm_is_a_norm(seed, a):
    rng = np.random.default_rng(seed)
    m = random_cone_market(rng, horizon=int(rng.integers(1, 3)))
    tree = m.tree
    X, Y = rng.standard_normal((2, tree.n_leaves, tree.assets))
    for t in range(tree.horizon + 1):
        nx, ny = k_norm(X, t, m), k_norm(Y, t, m)
        assert np.allclose(k_norm(a * X, t, m), abs(a) * nx, atol=1e-8)
        assert (k_norm(X + Y, t, m) <= nx + ny + 1e-8).all()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_wider_spreads_raise_norm_and_grow_dual(seed):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng, 2, 2)
    quotes = random_quotes(tree, rng)
    wide = [BidAsk(q.bid * 0.9, q.ask * 1.1) for q in quotes]
    narrow_m, wide_m = cone_from_bid_ask(tree, quotes), cone_from_bid_ask(tree, wide)
    X = rng.standard_normal((tree.n_leaves, 2))
    assert (k_norm(X, 0, wide_m) >= k_norm(X, 0, narrow_m) - 1e-8).all()
    for n in range(tree.n_nodes):
        for s in np.linspace(0.1, 3.0, 30):
            if in_dual_cone([1.0, s], narrow_m, n):
                assert in_dual_cone([1.0, s], wide_m, n)


def test_robust_na_reference_models(mA, mB):
    for m in (mA, mB):
        res = robust_na_check(m)
        assert res.holds
        for n in range(m.tree.n_nodes):
            assert in_dual_cone(res.witness[n], m, n)
    assert np.allclose(robust_na_check(mA).witness[:, 1], [1.0, 2.0 / 3.0 * 2 / 1, 1 / 3 * 2])


def test_robust_na_fails_when_ask_below_bids():
    tree = one_period_tree()
    quotes = {"0": (0.3, 0.35), "u": (1.8, 2.2), "d": (0.4, 0.6)}
    m = cone_from_bid_ask(tree, [BidAsk([quotes[i][0]], [quotes[i][1]]) for i in tree.ids])
    assert not robust_na_check(m).holds


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_na_witness_strictly_inside(seed):
    m = random_cone_market(np.random.default_rng(seed), horizon=2)
    res = robust_na_check(m)
    assert res.holds
    for n in range(m.tree.n_nodes):
        G = m.cone_generators(n)
        strict = ~m.lineality_mask(n)
        assert (G[strict] @ res.witness[n] > 1e-9).all()


def test_validate_market():
    assert validate_market(model_b()).ok
    tree = one_period_tree()
    # a cone that misses e2 violates the R^d_+ inclusion
    bad = ConeMarket(tree, [np.array([[1.0, 0.0], [1.0, 1.0]])] * 3)
    rep = validate_market(bad)
    assert not rep.ok


def test_region_market_validation():
    m = random_region_market(np.random.default_rng(3))
    assert validate_market(m).ok


def test_support_sigma_cone():
    m = model_b()
    tree = m.tree
    q = MeasureQ.reference(tree)
    good = np.array([[1.0, 1.0], [1.0, 2.0], [1.0, 0.5]])
    assert support_sigma(q, good, 0, 1, m).values == pytest.approx([0.0])
    bad = good.copy()
    bad[1, 1] = 2.5
    v = support_sigma(q, bad, 0, 1, m)
    assert v.flags == ("-inf",)


def test_support_sigma_free_cash_region():
    tree = one_period_tree()
    quotes = [BidAsk([0.9], [1.1]), BidAsk([1.8], [2.2]), BidAsk([0.4], [0.6])]
    region = region_from_bid_ask(tree, quotes, free_cash=1.0)
    q = MeasureQ.reference(tree)
    S = np.array([[1.0, 1.0], [1.0, 2.0], [1.0, 0.5]])
    # {x : x + e1 in K}: the minimum is attained at -e1, worth -1 under S
    assert support_sigma(q, S, 0, 1, region).values == pytest.approx([-1.0])
    assert support_sigma(q, np.zeros_like(S), 0, 1, region).values == pytest.approx([0.0])


def test_support_sigma_conical_region_matches_cone():
    tree = one_period_tree()
    quotes = [BidAsk([0.9], [1.1]), BidAsk([1.8], [2.2]), BidAsk([0.4], [0.6])]
    region = region_from_bid_ask(tree, quotes, free_cash=0.0)
    cone = cone_from_bid_ask(tree, quotes)
    q = MeasureQ(tree, [0.4, 0.6])
    for s2 in np.linspace(0.3, 2.5, 12):
        S = np.array([[1.0, 1.0], [1.0, s2], [1.0, 0.5]])
        a, b = support_sigma(q, S, 0, 1, region), support_sigma(q, S, 0, 1, cone)
        assert a.flags == b.flags
        if a.all_finite:
            assert a.values == pytest.approx(b.values, abs=1e-12)


def test_frictionless_helper():
    tree = one_period_tree()
    m = frictionless(tree, [1.0, 2.0, 0.5])
    assert in_dual_cone([1.0, 2.0], m, 1) and not in_dual_cone([1.0, 2.1], m, 1)
    # only e1 and e2 lie outside the lineality space
    assert dual_slack([1.0, 2.0], m, 1) == pytest.approx(1.0)
