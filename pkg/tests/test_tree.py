import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conerisk.models import binomial_tree, one_period_tree, random_tree
from conerisk.tree import (MeasureQ, ScenarioTree, TreeError, cond_expect, validate_tree,
                           xi_bar)


def _one_period(p_u, p_d):
    return ScenarioTree.from_dict({
        "horizon": 1, "assets": 2,
        "nodes": [{"id": "0", "time": 0, "parent": None},
                  {"id": "u", "time": 1, "parent": "0", "p": p_u},
                  {"id": "d", "time": 1, "parent": "0", "p": p_d}]}, prune=False)


def test_smallest_tree_is_valid():
    assert validate_tree(_one_period(0.5, 0.5)).ok


def test_probabilities_must_sum_to_one():
    rep = validate_tree(_one_period(0.6, 0.6))
    assert not rep.ok and rep.violation == "probabilities sum to 1.2"


def test_terminal_node_before_horizon():
    tree = ScenarioTree.from_dict({
        "horizon": 2, "assets": 2,
        "nodes": [{"id": "0", "time": 0, "parent": None},
                  {"id": "u", "time": 1, "parent": "0"},
                  {"id": "d", "time": 1, "parent": "0", "p": 0.5},
                  {"id": "uu", "time": 2, "parent": "u", "p": 0.5}]}, prune=False)
    rep = validate_tree(tree)
    assert rep.violation == "terminal node before horizon" and rep.node == "d"


@pytest.mark.parametrize("nodes, msg", [
    ([{"id": "0", "time": 0, "parent": None}, {"id": "0", "time": 1, "parent": "0", "p": 1}],
     "duplicate node id"),
    ([{"id": "0", "time": 0, "parent": None}, {"id": "x", "time": 1, "parent": None, "p": 1}],
     "expected exactly one root"),
    ([{"id": "0", "time": 0, "parent": None}, {"id": "u", "time": 1, "parent": "z", "p": 1}],
     "unknown parent"),
    ([{"id": "0", "time": 0, "parent": None}, {"id": "u", "time": 1, "parent": "0", "p": 0}],
     "not strictly positive"),
])
def test_structural_violations(nodes, msg):
    tree = ScenarioTree.from_dict({"horizon": 1, "assets": 2, "nodes": nodes}, prune=False)
    assert msg in validate_tree(tree).violation


def test_zero_probability_leaves_are_pruned():
    tree = ScenarioTree.from_dict({
        "horizon": 1, "assets": 2,
        "nodes": [{"id": "0", "time": 0, "parent": None},
                  {"id": "u", "time": 1, "parent": "0", "p": 1.0},
                  {"id": "d", "time": 1, "parent": "0", "p": 0.0}]})
    assert validate_tree(tree).ok and tree.n_leaves == 1


def test_json_round_trip():
    tree = binomial_tree(2)
    again = ScenarioTree.from_dict(tree.to_dict())
    assert again.ids == tree.ids and np.array_equal(again.p_leaf, tree.p_leaf)


def test_require_valid_raises():
    with pytest.raises(TreeError):
        _one_period(0.6, 0.6).require_valid()


def test_xi_bar_reference_measure_is_one():
    tree = binomial_tree(2)
    q = MeasureQ.reference(tree)
    for s in range(3):
        for sigma in range(s, 3):
            assert np.allclose(xi_bar(q, tree, s, sigma), 1.0)


def test_xi_bar_hand_value():
    tree = one_period_tree()
    q = MeasureQ(tree, [1 / 3, 2 / 3])
    assert np.allclose(xi_bar(q, tree, 0, 1), [2 / 3, 4 / 3])


def test_xi_bar_zero_density_fallback():
    tree = one_period_tree()
    q = MeasureQ(tree, [1.0, 0.0])
    assert np.allclose(xi_bar(q, tree, 0, 1), [2.0, 0.0])
    assert np.allclose(xi_bar(q, tree, 1, 1), [1.0, 1.0])


def test_xi_bar_time_order():
    tree = one_period_tree()
    with pytest.raises(TreeError):
        xi_bar(MeasureQ.reference(tree), tree, 1, 0)


def test_cond_expect_examples():
    tree = one_period_tree()
    x = np.array([4.0, 8.0])
    assert np.allclose(cond_expect(MeasureQ.reference(tree), x, 0), [6.0])
    assert np.allclose(cond_expect(MeasureQ(tree, [1 / 3, 2 / 3]), x, 0), [20 / 3])
    assert np.array_equal(cond_expect(MeasureQ(tree, [1 / 3, 2 / 3]), x, 1), x)


def test_measure_validation():
    tree = one_period_tree()
    with pytest.raises(ValueError):
        MeasureQ(tree, [0.5, 0.6])
    with pytest.raises(ValueError):
        MeasureQ(tree, [1.0, 0.0], kind="equivalent")


@st.composite
def tree_and_measure(draw):
    seed = draw(st.integers(0, 10_000))
    rng = np.random.default_rng(seed)
    tree = random_tree(rng, 2, int(rng.integers(1, 4)))
    w = rng.random(tree.n_leaves) * (rng.random(tree.n_leaves) < 0.8)
    if w.sum() == 0:
        w[0] = 1.0
    return tree, MeasureQ.from_weights(tree, w, renormalize=True), rng.standard_normal(tree.n_leaves)


@settings(max_examples=60, deadline=None)
@given(tree_and_measure())
def test_tower_property(data):
    tree, q, x = data
    T = tree.horizon
    for s in range(T + 1):
        inner = tree.lift(cond_expect(q, x, s), s)
        for t in range(s + 1):
            assert np.allclose(cond_expect(q, inner, t), cond_expect(q, x, t), atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(tree_and_measure())
def test_xi_bar_multiplicative(data):
    tree, q, _ = data
    T = tree.horizon
    for t in range(T + 1):
        for s in range(t, T + 1):
            for sigma in range(s, T + 1):
                lhs = xi_bar(q, tree, t, sigma)
                mid = xi_bar(q, tree, t, s)[_pos(tree, s)[tree.ancestor(s)[tree.at_time(sigma)]]]
                rhs = mid * xi_bar(q, tree, s, sigma)
                pos = q.density[tree.ancestor(t)[tree.at_time(sigma)]] > 0
                assert np.allclose(lhs[pos], rhs[pos], atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(tree_and_measure())
def test_cond_expect_of_one(data):
    tree, q, _ = data
    for t in range(tree.horizon + 1):
        assert np.allclose(cond_expect(q, np.ones(tree.n_leaves), t), 1.0)


def _pos(tree, s):
    pos = np.zeros(tree.n_nodes, dtype=int)
    pos[tree.at_time(s)] = np.arange(len(tree.at_time(s)))
    return pos
