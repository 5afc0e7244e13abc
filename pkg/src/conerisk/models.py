"""Reference markets and seeded random market generators.

MODEL-A  one period, frictionless, asset 2 moves 1 -> {2, 0.5}, p = (1/2, 1/2).
MODEL-B  same tree, bid-ask [0.9, 1.1] at the root, [1.8, 2.2] / [0.4, 0.6] at u / d.
MODEL-C  two periods, mid 1 -> {2, 0.5} -> {4, 1, 1, 0.25}, bid-ask = mid x [0.9, 1.1].
"""
from __future__ import annotations

import itertools

import numpy as np

from .market import BidAsk, ConeMarket, RegionMarket, cone_from_bid_ask, frictionless
from .tree import ScenarioTree

MAX_LEAVES = 27


def one_period_tree() -> ScenarioTree:
    return ScenarioTree.from_dict({
        "horizon": 1, "assets": 2,
        "nodes": [{"id": "0", "time": 0, "parent": None},
                  {"id": "u", "time": 1, "parent": "0", "p": 0.5},
                  {"id": "d", "time": 1, "parent": "0", "p": 0.5}],
    })


def binomial_tree(horizon: int = 2) -> ScenarioTree:
    nodes = [{"id": "0", "time": 0, "parent": None}]
    frontier = ["0"]
    for t in range(1, horizon + 1):
        nxt = []
        for par in frontier:
            for move in "ud":
                nid = move if par == "0" else par + move
                entry = {"id": nid, "time": t, "parent": par}
                if t == horizon:
                    entry["p"] = 0.5 ** horizon
                nodes.append(entry)
                nxt.append(nid)
        frontier = nxt
    return ScenarioTree.from_dict({"horizon": horizon, "assets": 2, "nodes": nodes})


def binomial_mids(tree: ScenarioTree, up: float = 2.0, down: float = 0.5) -> np.ndarray:
    mids = np.ones(tree.n_nodes)
    for k, nid in enumerate(tree.ids):
        if nid != "0":
            mids[k] = up ** nid.count("u") * down ** nid.count("d")
    return mids


def model_a() -> ConeMarket:
    tree = one_period_tree()
    return frictionless(tree, binomial_mids(tree))


def model_a_prices() -> np.ndarray:
    """The frictionless price process of MODEL-A as a node x d array."""
    tree = one_period_tree()
    return np.column_stack([np.ones(tree.n_nodes), binomial_mids(tree)])


def model_b() -> ConeMarket:
    tree = one_period_tree()
    quotes = {"0": (0.9, 1.1), "u": (1.8, 2.2), "d": (0.4, 0.6)}
    return cone_from_bid_ask(tree, [BidAsk([quotes[i][0]], [quotes[i][1]]) for i in tree.ids])


def model_c(spread: float = 0.1) -> ConeMarket:
    tree = binomial_tree(2)
    mids = binomial_mids(tree)
    return cone_from_bid_ask(tree, [BidAsk([m * (1 - spread)], [m * (1 + spread)]) for m in mids])


def reference_models() -> dict[str, ConeMarket]:
    return {"MODEL-A": model_a(), "MODEL-B": model_b(), "MODEL-C": model_c()}


# ---------------------------------------------------------------- random markets
def random_tree(rng: np.random.Generator, assets: int, horizon: int,
                max_leaves: int = MAX_LEAVES) -> ScenarioTree:
    """Tree with branching 2 or 3 per time (total leaves <= max_leaves) and random p."""
    branching = []
    leaves = 1
    for t in range(horizon):
        b = int(rng.integers(2, 4))
        if leaves * b * 2 ** (horizon - t - 1) > max_leaves:
            b = 2
        branching.append(b)
        leaves *= b
    tree = ScenarioTree.regular(branching, horizon, assets)
    # random one-step probabilities per node, bounded away from 0
    p_step = {}
    for k in range(tree.n_nodes):
        kids = tree.children[k]
        if len(kids):
            w = rng.uniform(0.2, 1.0, len(kids))
            for c, v in zip(kids, w / w.sum()):
                p_step[int(c)] = v
    data = tree.to_dict()
    p_leaf = {}
    for leaf in tree.leaves:
        w, k = 1.0, int(leaf)
        while tree.parent[k] >= 0:
            w *= p_step[k]
            k = int(tree.parent[k])
        p_leaf[tree.ids[leaf]] = w
    total = sum(p_leaf.values())
    for entry in data["nodes"]:
        if entry["id"] in p_leaf:
            entry["p"] = p_leaf[entry["id"]] / total
    return ScenarioTree.from_dict(data)


def random_mids(tree: ScenarioTree, rng: np.random.Generator) -> np.ndarray:
    """Risky mid prices (nodes x (d-1)) that are a martingale under a random positive measure."""
    d1 = tree.assets - 1
    mids = np.ones((tree.n_nodes, d1))
    for k in range(tree.n_nodes):
        kids = tree.children[k]
        if not len(kids):
            continue
        q = rng.uniform(0.2, 1.0, len(kids))
        q /= q.sum()
        f = rng.uniform(0.5, 2.0, (len(kids), d1))
        f /= q @ f
        mids[kids] = mids[k] * f
    return mids


def random_quotes(tree: ScenarioTree, rng: np.random.Generator,
                  max_spread: float = 0.1) -> list[BidAsk]:
    mids = random_mids(tree, rng)
    spreads = rng.uniform(0.0, max_spread, mids.shape)
    return [BidAsk(m * (1 - s), m * (1 + s)) for m, s in zip(mids, spreads)]


def random_cone_market(rng: np.random.Generator, assets: int | None = None,
                       horizon: int | None = None) -> ConeMarket:
    d = int(rng.integers(2, 4)) if assets is None else assets
    T = int(rng.integers(1, 4)) if horizon is None else horizon
    tree = random_tree(rng, d, T)
    return cone_from_bid_ask(tree, random_quotes(tree, rng))


def convex_cost_region(mid: np.ndarray, spread: np.ndarray, depth: float,
                       grid: int = 3) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Polyhedral region with size-dependent costs around ``mid``.

    Rows x1 + s.x' >= -kappa(s) for quotes s on a grid spanning mid*(1 -+ spread).
    kappa equals ``depth`` at mid and falls linearly to 0 at the extreme quotes:
    large positions face the widest bid-ask cone (the recession cone) while
    small positions are solvent near mid prices.
    """
    mid = np.atleast_1d(mid)
    spread = np.atleast_1d(spread)
    axes = [np.linspace(m * (1 - s), m * (1 + s), grid) for m, s in zip(mid, spread)]
    rows, rhs = [], []
    for s in itertools.product(*axes):
        s = np.array(s)
        rows.append([1.0, *s])
        rel = np.abs(s - mid) / (mid * np.maximum(spread, 1e-12))
        rhs.append(-depth * (1.0 - rel.max()) if spread.max() > 0 else 0.0)
    rec = BidAsk(mid * (1 - spread), mid * (1 + spread)).generators()
    return np.array(rows), np.array(rhs), rec


def random_region_market(rng: np.random.Generator, assets: int | None = None,
                         horizon: int | None = None) -> RegionMarket:
    d = int(rng.integers(2, 4)) if assets is None else assets
    T = int(rng.integers(1, 3)) if horizon is None else horizon
    tree = random_tree(rng, d, T, max_leaves=9)
    mids = random_mids(tree, rng)
    G, h, rec = [], [], []
    for m in mids:
        g, hh, r = convex_cost_region(m, rng.uniform(0.02, 0.1, d - 1), rng.uniform(0.0, 0.2))
        G.append(g); h.append(hh); rec.append(r)
    return RegionMarket(tree, G, h, rec)


def random_claim(tree: ScenarioTree, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    return scale * rng.standard_normal((tree.n_leaves, tree.assets))
