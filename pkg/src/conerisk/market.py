"""Solvency cones and convex solvency regions on a scenario tree.

Cones are stored by generators (one generator per row) and regions as
H-polyhedra ``{x : G x >= h}`` with explicit recession generators.  Dual-side
questions are answered with dot products or LPs; dual generators are never
enumerated.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .lp import EQ, GE, LinearProgram, feasibility_with_margin, solve
from .tree import MeasureQ, ScenarioTree
from .values import MINUS_INF, FINITE, RiskValue

DUAL_TOL = 1e-10


class MarketError(ValueError):
    """Invalid market data or a violated market assumption."""


@dataclass(frozen=True)
class BidAsk:
    """Quotes of assets 2..d against cash at one node, optionally with cross quotes.

    ``cross[i][j]`` (0-based asset indices, nan where absent) is the amount of
    asset i paid for one unit of asset j.
    """

    bid: np.ndarray
    ask: np.ndarray
    cross: np.ndarray | None = None

    def __post_init__(self):
        bid = np.atleast_1d(np.asarray(self.bid, dtype=float))
        ask = np.atleast_1d(np.asarray(self.ask, dtype=float))
        if bid.shape != ask.shape:
            raise MarketError("bid and ask must have the same length")
        if not (bid > 0).all():
            raise MarketError("bids must be strictly positive")
        if not (ask >= bid).all():
            raise MarketError("ask below bid")
        object.__setattr__(self, "bid", bid)
        object.__setattr__(self, "ask", ask)
        if self.cross is not None:
            cross = np.asarray(self.cross, dtype=float)
            if cross.shape != (len(bid) + 1,) * 2:
                raise MarketError("cross quotes must be a d x d matrix")
            object.__setattr__(self, "cross", cross)

    @property
    def d(self) -> int:
        return len(self.bid) + 1

    def generators(self) -> np.ndarray:
        d = self.d
        eye = np.eye(d)
        rows = [eye[i] for i in range(d)]
        for i in range(1, d):
            rows.append(self.ask[i - 1] * eye[0] - eye[i])
            rows.append(eye[i] - self.bid[i - 1] * eye[0])
        if self.cross is not None:
            for i in range(d):
                for j in range(d):
                    a = self.cross[i, j]
                    if i != j and math.isfinite(a):
                        rows.append(a * eye[i] - eye[j])
        return np.array(rows)

    def halfspaces(self) -> np.ndarray:
        """Facet normals of the generated cone (no cross quotes): x1 + sum s_i x_i >= 0."""
        if self.cross is not None:
            raise MarketError("facet form is only available without cross quotes")
        corners = itertools.product(*zip(self.bid, self.ask))
        return np.array([[1.0, *c] for c in corners])


class _Model:
    kind = "abstract"

    def __init__(self, tree: ScenarioTree):
        self.tree = tree.require_valid()
        self._cache: dict = {}

    @property
    def d(self) -> int:
        return self.tree.assets

    def cone_generators(self, n: int) -> np.ndarray:
        """Generators of the solvency cone at node n (recession cone for regions)."""
        raise NotImplementedError

    def lineality_mask(self, n: int) -> np.ndarray:
        """Generators whose negatives are also in the cone (they span the lineality space)."""
        key = ("lineality", n)
        if key not in self._cache:
            G = self.cone_generators(n)
            self._cache[key] = np.array([_in_cone(-g, G) for g in G], dtype=bool)
        return self._cache[key]

    def cached(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]


class ConeMarket(_Model):
    """Polyhedral solvency cone per node, given by generators."""

    kind = "cone"

    def __init__(self, tree: ScenarioTree, generators: Sequence[np.ndarray]):
        super().__init__(tree)
        if len(generators) != tree.n_nodes:
            raise MarketError(f"need generators for {tree.n_nodes} nodes, got {len(generators)}")
        gens = []
        for n, g in enumerate(generators):
            g = np.atleast_2d(np.asarray(g, dtype=float))
            if g.shape[1] != tree.assets:
                raise MarketError(f"generators at node {tree.ids[n]} have dimension {g.shape[1]}")
            gens.append(g)
        self.generators = tuple(gens)

    def cone_generators(self, n: int) -> np.ndarray:
        return self.generators[n]


class RegionMarket(_Model):
    """Convex polyhedral solvency region {x : G x >= h} per node with recession generators."""

    kind = "region"

    def __init__(self, tree: ScenarioTree, G: Sequence[np.ndarray], h: Sequence[np.ndarray],
                 recession: Sequence[np.ndarray]):
        super().__init__(tree)
        if not (len(G) == len(h) == len(recession) == tree.n_nodes):
            raise MarketError("region data must be given for every node")
        self.G = tuple(np.atleast_2d(np.asarray(g, dtype=float)) for g in G)
        self.h = tuple(np.atleast_1d(np.asarray(v, dtype=float)) for v in h)
        self.recession = tuple(np.atleast_2d(np.asarray(r, dtype=float)) for r in recession)
        for n in range(tree.n_nodes):
            if self.G[n].shape != (len(self.h[n]), tree.assets):
                raise MarketError(f"G/h shape mismatch at node {tree.ids[n]}")
            if self.recession[n].shape[1] != tree.assets:
                raise MarketError(f"recession generators at node {tree.ids[n]} have wrong dimension")

    def cone_generators(self, n: int) -> np.ndarray:
        return self.recession[n]


SolvencyModel = ConeMarket | RegionMarket


def cone_from_bid_ask(tree: ScenarioTree, quotes: Sequence[BidAsk]) -> ConeMarket:
    """Solvency cones {e_i} + {ask_i e1 - e_i, e_i - bid_i e1} (+ cross generators) per node."""
    return ConeMarket(tree, [q.generators() for q in quotes])


def region_from_bid_ask(tree: ScenarioTree, quotes: Sequence[BidAsk],
                        free_cash: Sequence[float] | float = 0.0) -> RegionMarket:
    """Region {x : x + c e1 in K} per node, with K the bid-ask cone and c the free cash."""
    c = np.broadcast_to(np.asarray(free_cash, dtype=float), (tree.n_nodes,))
    G = [q.halfspaces() for q in quotes]
    h = [-c[n] * G[n][:, 0] for n in range(tree.n_nodes)]
    rec = [q.generators() for q in quotes]
    return RegionMarket(tree, G, h, rec)


def frictionless(tree: ScenarioTree, prices: np.ndarray) -> ConeMarket:
    """Zero-spread market from a node x (d-1) array of prices of the risky assets."""
    prices = np.asarray(prices, dtype=float).reshape(tree.n_nodes, -1)
    return cone_from_bid_ask(tree, [BidAsk(p, p) for p in prices])


def _in_cone(x: np.ndarray, G: np.ndarray) -> bool:
    if np.abs(x).max() <= 1e-14:
        return True
    for g in G:
        if np.allclose(g, x, atol=1e-13):
            return True
    k = G.shape[0]
    lp = LinearProgram(np.zeros(k), G.T, [EQ] * len(x), x, np.zeros(k), np.full(k, np.inf))
    return solve(lp).optimal


def in_cone(x: Sequence[float], model: _Model, n: int) -> bool:
    return _in_cone(np.asarray(x, dtype=float), model.cone_generators(n))


def in_dual_cone(w: Sequence[float], model: _Model, n: int, tol: float = DUAL_TOL) -> bool:
    """w . g >= -tol for every generator g of the node's (recession) cone."""
    w = np.asarray(w, dtype=float)
    return bool((model.cone_generators(n) @ w >= -tol).all())


def dual_slack(w: Sequence[float], model: _Model, n: int) -> float:
    """Smallest w . g over non-lineality generators (positive means strictly consistent)."""
    G = model.cone_generators(n)
    mask = ~model.lineality_mask(n)
    if not mask.any():
        return math.inf
    return float((G[mask] @ np.asarray(w, dtype=float)).min())


# ------------------------------------------------------------------ validation
@dataclass(frozen=True)
class MarketReport:
    ok: bool
    violation: str | None = None
    node: str | None = None

    def to_json(self) -> dict:
        return {"ok": self.ok, "violation": self.violation, "node": self.node}


def validate_market(model: _Model) -> MarketReport:
    """Check R^d_+ inside every cone, the interior condition at the horizon and region sanity."""
    tree = model.tree
    d = model.d
    eye = np.eye(d)
    for n in range(tree.n_nodes):
        nid = tree.ids[n]
        G = model.cone_generators(n)
        if G.shape[0] == 0:
            return MarketReport(False, "empty generator set", nid)
        for i in range(d):
            if not _in_cone(eye[i], G):
                return MarketReport(False, f"cone does not contain e_{i + 1}", nid)
        if isinstance(model, RegionMarket):
            if (model.h[n] > 1e-12).any():
                return MarketReport(False, "0 is not in the solvency region", nid)
            if (model.G[n] @ G.T < -1e-10).any():
                return MarketReport(False, "recession generator leaves the region", nid)
        if tree.time[n] == tree.horizon:
            if np.linalg.matrix_rank(G) < d:
                return MarketReport(False, "terminal cone has empty interior", nid)
            for i in range(d):
                if not _strictly_inside(eye[i], G):
                    return MarketReport(False, f"e_{i + 1} is not interior to the terminal cone", nid)
    return MarketReport(True)


def _strictly_inside(x: np.ndarray, G: np.ndarray) -> bool:
    """x is a combination of all generators with weights bounded away from zero."""
    k = G.shape[0]
    lp = LinearProgram(np.zeros(k), np.vstack([G.T, np.eye(k)]),
                       [EQ] * len(x) + [GE] * k, np.concatenate([x, np.zeros(k)]),
                       np.zeros(k), np.full(k, np.inf))
    res = feasibility_with_margin(lp, range(len(x), len(x) + k), cap=1.0)
    return res.feasible


# ------------------------------------------------------- adapted cone sums
def path_sum_block(model: _Model, n: int, from_time: int) -> tuple[np.ndarray, list[np.ndarray]]:
    """Matrix mapping node-wise generator weights to the terminal sums along each path.

    Columns cover every node k in the subtree of ``n`` with time >= ``from_time``
    and every generator of the cone at k; rows are (leaf, asset) pairs of the
    subtree, leaf-major.  Also returns the column range of each node.
    """
    def build():
        tree = model.tree
        sub = tree.subtree_nodes(n)
        P = tree.path_matrix(n)
        blocks, spans = [], []
        col = 0
        for a, k in enumerate(sub):
            if tree.time[k] < from_time:
                continue
            G = model.cone_generators(k)
            blocks.append(np.kron(P[:, a:a + 1].astype(float), G.T))
            spans.append((int(k), np.arange(col, col + G.shape[0])))
            col += G.shape[0]
        M = np.hstack(blocks) if blocks else np.zeros((P.shape[0] * model.d, 0))
        return M, spans
    return model.cached(("path_sum", n, from_time), build)


def _leaf_rows(tree: ScenarioTree, n: int, X: np.ndarray) -> np.ndarray:
    return X[tree.subtree_leaves(n)].reshape(-1)


def k_norm(X: np.ndarray, t: int, model: _Model, trade_from: int | None = None) -> np.ndarray:
    """Per time-t node, least F_t-measurable c with c e1 >= X >= -c e1 in the cone order.

    Trades are allowed at times ``trade_from``..T (default ``t``); ``trade_from=T``
    gives the norm built on the terminal cone alone.
    """
    tree = model.tree
    X = _as_claim(X, tree)
    s = t if trade_from is None else trade_from
    if not t <= s <= tree.horizon:
        raise MarketError(f"need t <= trade_from <= T, got t={t}, trade_from={s}")
    out = []
    for n in tree.at_time(t):
        M, _ = path_sum_block(model, n, s)
        rows, k = M.shape
        e1 = np.tile(np.eye(model.d)[0], rows // model.d)
        x = _leaf_rows(tree, n, X)
        # [c, lam, mu]: M lam - c e1 = -x ; M mu - c e1 = x
        A = np.zeros((2 * rows, 1 + 2 * k))
        A[:rows, 0] = -e1
        A[:rows, 1:1 + k] = M
        A[rows:, 0] = -e1
        A[rows:, 1 + k:] = M
        c = np.zeros(1 + 2 * k)
        c[0] = 1.0
        lp = LinearProgram(c, A, [EQ] * (2 * rows), np.concatenate([-x, x]),
                           np.zeros(1 + 2 * k), np.full(1 + 2 * k, np.inf))
        sol = solve(lp)
        if not sol.optimal:
            raise MarketError(f"norm LP {sol.status} at node {tree.ids[n]}: cone assumption fails")
        out.append(sol.value)
    return np.array(out)


def _as_claim(X, tree: ScenarioTree) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape != (tree.n_leaves, tree.assets):
        raise MarketError(f"claim must have shape {(tree.n_leaves, tree.assets)}, got {X.shape}")
    return X


# ------------------------------------------------------------ no-arbitrage
@dataclass(frozen=True)
class NaResult:
    holds: bool
    witness: np.ndarray | None
    margin: float


def cps_system(model: _Model, root: int | None = None, strict: bool = True):
    """LP rows describing consistent price systems on the subtree of ``root``.

    Variables are Z[k, i] for subtree nodes k (row-major, free).  Rows: Z_root,1 = 1,
    P-martingale equations, and g . Z_k >= 0 per generator.  Returns
    ``(lp, nodes, strict_rows)`` where strict rows are the non-lineality dual rows.
    """
    tree = model.tree
    root = 0 if root is None else root

    def build():
        nodes = tree.subtree_nodes(root)
        pos = {int(k): a for a, k in enumerate(nodes)}
        d = model.d
        nv = len(nodes) * d
        rows, rel, rhs, strict_rows = [], [], [], []
        r = np.zeros(nv)
        r[pos[root] * d] = 1.0
        rows.append(r); rel.append(EQ); rhs.append(1.0)
        trans = tree.transition()
        for k in nodes:
            kids = tree.children[k]
            if len(kids) == 0:
                continue
            for i in range(d):
                r = np.zeros(nv)
                r[pos[int(k)] * d + i] = -1.0
                for c in kids:
                    r[pos[int(c)] * d + i] += trans[c]
                rows.append(r); rel.append(EQ); rhs.append(0.0)
        for k in nodes:
            G = model.cone_generators(k)
            lin = model.lineality_mask(k)
            for g, is_lin in zip(G, lin):
                r = np.zeros(nv)
                r[pos[int(k)] * d: pos[int(k)] * d + d] = g
                if strict and not is_lin:
                    strict_rows.append(len(rows))
                rows.append(r); rel.append(GE); rhs.append(0.0)
        lp = LinearProgram(np.zeros(nv), np.array(rows), rel, np.array(rhs),
                           np.full(nv, -np.inf), np.full(nv, np.inf))
        return lp, nodes, strict_rows
    return model.cached(("cps", root, strict), build)


def cps_leaf_system(model: _Model, root: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Consistent price systems on a subtree parametrized by their terminal values only.

    Inner values are conditional P-averages of the leaves, so the martingale
    equations disappear.  Variables are Z[l, i] >= 0 for the subtree leaves
    (leaf-major; nonnegativity holds because every cone contains R^d_+).
    Returns ``(norm_row, dual_rows, weights)``: the normalization row for
    Z_root,1 = 1, the rows g . Z_k >= 0 (nonnegative generators are implied
    by the bounds and omitted) and the node-to-leaf averaging matrix.
    """
    tree = model.tree

    def build():
        d = model.d
        leaves = tree.subtree_leaves(root)
        nodes = tree.subtree_nodes(root)
        P = tree.path_matrix(root)                      # leaf x node
        p_leaf = tree.p_leaf[leaves]
        W = (P * p_leaf[:, None]) / tree.mass[nodes][None, :]   # P(l | k) on paths
        rows = []
        for a, k in enumerate(nodes):
            G = model.cone_generators(k)
            for g in G[G.min(axis=1) < 0]:
                rows.append(np.kron(W[:, a], g))
        norm = np.kron(W[:, list(nodes).index(root)], np.eye(d)[0])
        return norm, np.array(rows).reshape(-1, len(leaves) * d), W
    return model.cached(("cps_leaf", root), build)


def robust_na_check(model: _Model) -> NaResult:
    """Existence of a strictly consistent price system (margin LP), with the witness Z."""
    def run():
        lp, nodes, strict = cps_system(model)
        res = feasibility_with_margin(lp, strict)
        if not res.feasible:
            return NaResult(False, None, res.margin)
        Z = np.zeros((model.tree.n_nodes, model.d))
        Z[nodes] = res.witness.reshape(len(nodes), model.d)
        return NaResult(True, Z, res.margin)
    return model.cached("robust_na", run)


# ----------------------------------------------------------- support function
def sigma_node(Y: np.ndarray, model: _Model, n: int) -> float:
    """min over the solvency set at node n of Y . z; -inf when unbounded below."""
    Y = np.asarray(Y, dtype=float)
    if isinstance(model, ConeMarket):
        return 0.0 if in_dual_cone(Y, model, n) else -math.inf
    G, h = model.G[n], model.h[n]
    d = model.d
    lp = LinearProgram(Y, G, [GE] * len(h), h, np.full(d, -np.inf), np.full(d, np.inf))
    sol = solve(lp)
    if sol.status == "unbounded":
        return -math.inf
    if not sol.optimal:
        raise MarketError(f"support function LP {sol.status} at node {model.tree.ids[n]}")
    return sol.value


def support_sigma(q: MeasureQ, S: np.ndarray, t: int, s: int, model: _Model) -> RiskValue:
    """sigma_t^s(E[dQ/dP | F_s] S_s) per time-t node: conditional expectation of node-wise minima."""
    tree = model.tree
    if s < t:
        raise MarketError(f"support function needs s >= t, got t={t}, s={s}")
    S = np.asarray(S, dtype=float)
    nodes_t = tree.at_time(t)
    anc = tree.ancestor(t)
    vals, flags = [], []
    for n in nodes_t:
        total, flag = 0.0, FINITE
        for k in tree.at_time(s):
            if anc[k] != n:
                continue
            Y = q.density[k] * S[k]
            if not np.any(Y):
                continue
            v = sigma_node(Y, model, k)
            if v == -math.inf:
                flag = MINUS_INF
                break
            total += tree.mass[k] / tree.mass[n] * v
        vals.append(total if flag == FINITE else 0.0)
        flags.append(flag)
    return RiskValue(nodes_t, np.array(vals), tuple(flags))
