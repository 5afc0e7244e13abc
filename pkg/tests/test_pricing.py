import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conerisk.models import (binomial_mids, binomial_tree, model_a_prices,
                             one_period_tree, random_cone_market)
from conerisk.pricing import (ConsistentPriceSystem, DualPair, PriceSystem, arbitrage_search,
                              cps_to_pair, dual_norm, emm_polytope, emm_strictly_feasible,
                              is_martingale, is_q_martingale, na_check, pair_from_price,
                              pair_to_cps, price_bound, sample_price_systems,
                              validate_price_system)
from conerisk.lp import solve, LinearProgram
from conerisk.tree import MeasureQ


@pytest.fixture
def priceA():
    return PriceSystem(one_period_tree(), model_a_prices())


def test_model_a_prices_valid(mA, priceA):
    assert validate_price_system(priceA, mA).ok


def test_cash_component_must_be_one(mA, priceA):
    S = priceA.S.copy()
    S[0, 0] = 0.99
    rep = validate_price_system(PriceSystem(priceA.tree, S), mA)
    assert rep.violation == "cash component != 1"


def test_dual_cone_violation_names_node(mB):
    S = np.array([[1.0, 1.0], [1.0, 2.5], [1.0, 0.5]])
    rep = validate_price_system(PriceSystem(mB.tree, S), mB)
    assert not rep.ok and rep.violation == "dual-cone membership at node u"


def test_price_bound(mA):
    assert price_bound(mA) == pytest.approx([1.0, 2.0])


def test_na_model_a(priceA):
    cert = na_check(priceA)
    assert cert.holds and np.allclose(cert.q.q, [1 / 3, 2 / 3])


def test_na_fails_above_hull():
    S = np.array([[1.0, 2.5], [1.0, 2.0], [1.0, 0.5]])
    price = PriceSystem(one_period_tree(), S)
    assert not na_check(price).holds
    assert arbitrage_search(price)[0]


def test_constant_prices_hold_with_p():
    tree = binomial_tree(2)
    price = PriceSystem(tree, np.ones((tree.n_nodes, 2)))
    cert = na_check(price)
    assert cert.holds
    tpl = emm_polytope(price)
    # the martingale rows vanish: the polytope is the whole simplex
    assert np.allclose(tpl.lp.A[1:1 + len(tpl.lp.A) - 1 - tree.n_leaves], 0.0)


def test_emm_polytope_model_a(priceA):
    tpl = emm_polytope(priceA)
    assert tpl.lp.A.shape[0] == 1 + 1 + 2
    sol = solve(LinearProgram([1.0, 0.0], tpl.lp.A, tpl.lp.rel, tpl.lp.b, tpl.lp.lb, tpl.lp.ub))
    assert np.allclose(sol.primal, [1 / 3, 2 / 3])


def test_complete_binomial_point_polytope():
    tree = binomial_tree(2)
    S = np.column_stack([np.ones(tree.n_nodes), binomial_mids(tree)])
    tpl = emm_polytope(PriceSystem(tree, S))
    values = []
    for sense in ("min", "max"):
        for j in range(tree.n_leaves):
            c = np.eye(tree.n_leaves)[j]
            values.append(solve(LinearProgram(c, tpl.lp.A, tpl.lp.rel, tpl.lp.b, tpl.lp.lb,
                                              tpl.lp.ub, sense)).value)
    lo, hi = np.array(values[:4]), np.array(values[4:])
    assert np.allclose(lo, hi) and np.allclose(lo, [1 / 9, 2 / 9, 2 / 9, 4 / 9])


def test_cps_maps_model_a(priceA):
    q = MeasureQ(priceA.tree, [1 / 3, 2 / 3])
    cps = pair_to_cps(DualPair(q, priceA), 0)
    assert np.allclose(cps.Z[1], (2 / 3) * np.array([1, 2]))
    assert np.allclose(cps.Z[2], (4 / 3) * np.array([1, 0.5]))
    back = cps_to_pair(cps, 0)
    assert np.allclose(back.q.q, q.q) and np.allclose(back.S, priceA.S)


def test_pair_to_cps_with_p_is_identity(priceA):
    cps = pair_to_cps(DualPair(MeasureQ.reference(priceA.tree), priceA), 0)
    assert np.allclose(cps.Z, priceA.S)


def test_zero_cash_leaf_fallback():
    tree = one_period_tree()
    Z = np.array([[1.0, 1.0], [2.0, 2.0], [0.0, 0.0]])
    pair = cps_to_pair(ConsistentPriceSystem(tree, Z, 0), 0)
    assert pair.q.q[1] == 0.0 and np.array_equal(pair.S[2], [1.0, 1.0])


def test_sampling_model_a(mA):
    samples = sample_price_systems(mA, 20, 0)
    assert len(samples) == 1
    assert np.allclose(samples[0].pair.q.q, [1 / 3, 2 / 3])


def test_sampling_model_b_hits_corner(mB, samples_b):
    corners = [s for s in samples_b if np.allclose(s.price.S[:, 1], [1.1, 1.8, 0.4])]
    assert corners and np.allclose(corners[0].pair.q.q, [0.5, 0.5])


def test_sampling_zero_and_determinism(mB):
    assert sample_price_systems(mB, 0, 3) == []
    a = sample_price_systems(mB, 8, 3)
    b = sample_price_systems(mB, 8, 3)
    assert [s.price.key() for s in a] == [s.price.key() for s in b]


def test_sampled_systems_are_valid_and_certified(mC, samples_c):
    keys = set()
    for s in samples_c:
        assert validate_price_system(s.price, mC).ok
        assert na_check(s.price).holds
        assert is_q_martingale(s.pair)
        keys.add(s.price.key())
    assert len(keys) == len(samples_c)


def test_round_trip_on_samples(mC, samples_c):
    for s in samples_c:
        Z = pair_to_cps(s.pair, 0).Z
        assert is_martingale(mC.tree, Z)
        again = pair_to_cps(cps_to_pair(ConsistentPriceSystem(mC.tree, Z, 0), 0), 0).Z
        pos = Z[:, 0] > 0
        assert np.allclose(again[pos], Z[pos], atol=1e-9)


def test_time_s_certification_is_monotone(mC, samples_c):
    for s in samples_c:
        for start in range(1, mC.tree.horizon):
            assert na_check(s.price, start).holds


def test_dual_norm_is_one(mB, mC, samples_b, samples_c):
    for model, samples in ((mB, samples_b), (mC, samples_c[:6])):
        for s in samples:
            for t in range(model.tree.horizon):
                assert np.allclose(dual_norm(s.pair, t, model), 1.0, atol=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_ftap_two_routes_agree(seed):
    rng = np.random.default_rng(seed)
    m = random_cone_market(rng, horizon=2)
    tree = m.tree
    S = np.ones((tree.n_nodes, tree.assets))
    S[:, 1:] = np.exp(rng.normal(0, 0.3, (tree.n_nodes, tree.assets - 1)))
    price = PriceSystem(tree, S)
    holds = na_check(price).holds
    assert holds == emm_strictly_feasible(price)
    assert holds == (not arbitrage_search(price)[0])


def test_pair_from_price(priceA):
    pair = pair_from_price(priceA)
    assert pair.membership == "Q^e(S)" and is_q_martingale(pair)
