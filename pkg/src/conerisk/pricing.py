"""Eligible price processes, martingale measures and consistent price systems.

A price system ``S`` is a node x d array with cash component 1.  A consistent
price system ``Z`` is a node x d P-martingale in the dual cones.  The two are
linked through the measure ``dQ/dP = Z_T1 / Z_t1`` and ``S = Z / Z_1`` (1 where
the cash component vanishes).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .lp import EQ, GE, LinearProgram, feasibility_with_margin, solve
from .market import (DUAL_TOL, MarketError, _Model, cps_system, in_dual_cone, k_norm,
                     path_sum_block, robust_na_check)
from .tree import MeasureQ, ScenarioTree, xi_bar

CASH_TOL = 1e-12
BOUND_TOL = 1e-9
KEY_DECIMALS = 9


class PricingError(ValueError):
    """Invalid price system or an empty set of consistent prices."""


@dataclass(frozen=True)
class PriceSystem:
    tree: ScenarioTree
    S: np.ndarray

    def __post_init__(self):
        S = np.asarray(self.S, dtype=float)
        if S.shape != (self.tree.n_nodes, self.tree.assets):
            raise PricingError(f"price system must have shape {(self.tree.n_nodes, self.tree.assets)}")
        object.__setattr__(self, "S", S)

    @property
    def terminal(self) -> np.ndarray:
        return self.S[self.tree.leaves]

    def key(self) -> bytes:
        return np.round(self.S, KEY_DECIMALS).tobytes()

    def to_json(self) -> dict:
        return {"S": {nid: [float(v) for v in row] for nid, row in zip(self.tree.ids, self.S)}}


@dataclass(frozen=True)
class ConsistentPriceSystem:
    """Adapted P-martingale Z in the dual cones, normalized so Z_{start,1} = 1."""

    tree: ScenarioTree
    Z: np.ndarray
    start: int = 0


@dataclass(frozen=True)
class DualPair:
    q: MeasureQ
    price: PriceSystem
    start: int = 0
    membership: str = "Q_t"

    @property
    def S(self) -> np.ndarray:
        return self.price.S


@dataclass(frozen=True)
class Report:
    ok: bool
    violation: str | None = None
    node: str | None = None

    def to_json(self) -> dict:
        return {"ok": self.ok, "violation": self.violation, "node": self.node}


# -------------------------------------------------------------- validation
def price_bound(model: _Model) -> np.ndarray:
    """Per asset, max(||e_i||_{K_T,0}, 1): the uniform bound on eligible prices."""
    def build():
        tree = model.tree
        out = np.ones(model.d)
        for i in range(1, model.d):
            X = np.zeros((tree.n_leaves, model.d))
            X[:, i] = 1.0
            out[i] = max(float(k_norm(X, 0, model, trade_from=tree.horizon)[0]), 1.0)
        return out
    return model.cached("price_bound", build)


def validate_price_system(price: PriceSystem, model: _Model, start: int = 0) -> Report:
    """Cash component 1, node-wise dual-cone membership and the eligible-price bound."""
    tree = model.tree
    S = price.S
    nodes = [k for k in range(tree.n_nodes) if tree.time[k] >= start]
    for k in nodes:
        if abs(S[k, 0] - 1.0) > CASH_TOL:
            return Report(False, "cash component != 1", tree.ids[k])
    for k in nodes:
        if not in_dual_cone(S[k], model, k):
            return Report(False, f"dual-cone membership at node {tree.ids[k]}", tree.ids[k])
    bound = price_bound(model)
    for k in nodes:
        if (np.abs(S[k]) > bound + BOUND_TOL).any():
            return Report(False, "price exceeds the eligible bound", tree.ids[k])
    return Report(True)


# --------------------------------------------------------- martingale measures
@dataclass(frozen=True)
class EmmTemplate:
    """Constraint set of conditional martingale measures on the subtree of ``root``.

    Variables are the leaf weights of the subtree (aligned with ``leaves``, positions
    into the tree's leaf array).  ``strict_rows`` are the positivity rows.
    """

    lp: LinearProgram
    leaves: np.ndarray
    strict_rows: list[int]
    root: int


def martingale_rows(tree: ScenarioTree, S: np.ndarray, root: int) -> np.ndarray:
    """Rows sum_{l below k} r_l (S_T(l) - S(k)) = 0 for every non-leaf k and risky asset."""
    leaves = tree.subtree_leaves(root)
    ST = S[tree.leaves[leaves]]
    rows = []
    for k in tree.subtree_nodes(root):
        if tree.time[k] == tree.horizon:
            continue
        below = np.isin(leaves, tree.subtree_leaves(k))
        for i in range(1, tree.assets):
            rows.append(np.where(below, ST[:, i] - S[k, i], 0.0))
    return np.array(rows).reshape(-1, len(leaves))


def emm_polytope(price: PriceSystem, root: int | None = None) -> EmmTemplate:
    tree = price.tree
    root = 0 if root is None else root
    leaves = tree.subtree_leaves(root)
    L = len(leaves)
    M = martingale_rows(tree, price.S, root)
    A = np.vstack([np.ones((1, L)), M, np.eye(L)])
    rel = [EQ] * (1 + len(M)) + [GE] * L
    b = np.concatenate([[1.0], np.zeros(len(M)), np.zeros(L)])
    lp = LinearProgram(np.zeros(L), A, rel, b, np.zeros(L), np.full(L, np.inf))
    return EmmTemplate(lp, leaves, list(range(1 + len(M), 1 + len(M) + L)), root)


@dataclass(frozen=True)
class NaCertificate:
    holds: bool
    q: MeasureQ | None
    margin: float

    def to_json(self) -> dict:
        return {"holds": self.holds, "margin": self.margin,
                "q": None if self.q is None else self.q.to_json()}


def na_check(price: PriceSystem, start: int = 0) -> NaCertificate:
    """Equivalent martingale measure with maximal density margin q_l >= eps p_l.

    With ``start > 0`` every time-``start`` subtree must admit a conditional EMM;
    the returned witness pastes the conditional witnesses with the P-marginal.
    """
    tree = price.tree
    q = np.zeros(tree.n_leaves)
    worst = math.inf
    for root in tree.at_time(start):
        tpl = emm_polytope(price, root)
        p_cond = tree.p_leaf[tpl.leaves] / tree.mass[root]
        A = tpl.lp.A.copy()
        A[tpl.strict_rows] /= p_cond[:, None]
        lp = LinearProgram(tpl.lp.c, A, tpl.lp.rel, tpl.lp.b, tpl.lp.lb, tpl.lp.ub)
        res = feasibility_with_margin(lp, tpl.strict_rows)
        if not res.feasible:
            return NaCertificate(False, None, res.margin)
        worst = min(worst, res.margin)
        q[tpl.leaves] = res.witness * tree.mass[root]
    return NaCertificate(True, MeasureQ.from_weights(tree, q, renormalize=True), worst)


def emm_strictly_feasible(price: PriceSystem, root: int | None = None) -> bool:
    tpl = emm_polytope(price, root)
    return feasibility_with_margin(tpl.lp, tpl.strict_rows).feasible


def arbitrage_search(price: PriceSystem) -> tuple[bool, float]:
    """Primal route: best P-expected payoff in [0,1] of a zero-cost self-financing strategy.

    Returns (arbitrage found, optimal value).  Holdings of the risky assets are
    chosen at every non-terminal node; the cash account absorbs the cost.
    """
    tree = price.tree
    S = price.S
    d1 = tree.assets - 1
    inner = [k for k in range(tree.n_nodes) if tree.time[k] < tree.horizon]
    pos = {k: a for a, k in enumerate(inner)}
    L = tree.n_leaves
    n_theta = len(inner) * d1
    A = np.zeros((L, n_theta + L))
    for j, leaf in enumerate(tree.leaves):
        for t in range(tree.horizon):
            k = tree.ancestor(t)[leaf]
            nxt = tree.ancestor(t + 1)[leaf]
            A[j, pos[k] * d1: pos[k] * d1 + d1] = S[nxt, 1:] - S[k, 1:]
        A[j, n_theta + j] = -1.0
    c = np.concatenate([np.zeros(n_theta), tree.p_leaf])
    lb = np.concatenate([np.full(n_theta, -np.inf), np.zeros(L)])
    ub = np.concatenate([np.full(n_theta, np.inf), np.ones(L)])
    sol = solve(LinearProgram(c, A, [GE] * L, np.zeros(L), lb, ub, "max"))
    if not sol.optimal:
        raise PricingError(f"arbitrage LP {sol.status}")
    return sol.value > 1e-9, sol.value


# ------------------------------------------------------ CPS <-> (Q, S) maps
def cps_to_pair(cps: ConsistentPriceSystem, t: int | None = None) -> DualPair:
    """(Q, S) with S = Z / Z_1 (1 where Z_1 = 0) and dQ/dP = Z_T1 / Z_t1."""
    tree = cps.tree
    t = cps.start if t is None else t
    Z = np.asarray(cps.Z, dtype=float)
    cash = Z[:, 0]
    at_t = tree.ancestor(t)[tree.leaves]
    if (cash[tree.at_time(t)] <= 0).any():
        raise PricingError("consistent price system has a vanishing cash component at the start time")
    S = np.ones_like(Z)
    pos = cash > 0
    S[pos] = Z[pos] / cash[pos, None]
    dens = np.clip(cash[tree.leaves], 0.0, None) / cash[at_t]
    # Q keeps the P-marginal of F_t, as for dual pairs in Q_t
    q = tree.p_leaf * dens
    measure = MeasureQ.from_weights(tree, q, renormalize=True)
    return DualPair(measure, PriceSystem(tree, S), t,
                    "Q_t^e" if measure.kind == "equivalent" else "Q_t")


def pair_to_cps(pair: DualPair, t: int | None = None) -> ConsistentPriceSystem:
    """Z_s = xi_bar_{t,s}(Q) S_s for s >= t; earlier nodes carry E[Z_t | F_s]."""
    tree = pair.q.tree
    t = pair.start if t is None else t
    Z = np.zeros((tree.n_nodes, tree.assets))
    for s in range(t, tree.horizon + 1):
        nodes = tree.at_time(s)
        Z[nodes] = xi_bar(pair.q, tree, t, s)[:, None] * pair.S[nodes]
    for s in range(t - 1, -1, -1):
        for k in tree.at_time(s):
            kids = tree.children[k]
            Z[k] = tree.transition()[kids] @ Z[kids]
    return ConsistentPriceSystem(tree, Z, t)


def is_martingale(tree: ScenarioTree, Z: np.ndarray, start: int = 0, tol: float = 1e-9) -> bool:
    trans = tree.transition()
    for k in range(tree.n_nodes):
        if tree.time[k] < start or tree.time[k] == tree.horizon:
            continue
        kids = tree.children[k]
        if np.abs(trans[kids] @ Z[kids] - Z[k]).max() > tol * max(1.0, np.abs(Z[k]).max()):
            return False
    return True


def is_q_martingale(pair: DualPair, tol: float = 1e-9) -> bool:
    """S_s = E_Q[S_T | F_s] at every node carrying Q-mass."""
    tree = pair.q.tree
    ST = pair.S[tree.leaves]
    for k in range(tree.n_nodes):
        if tree.time[k] < pair.start or pair.q.mass[k] <= 0:
            continue
        ls = tree.subtree_leaves(k)
        cond = pair.q.q[ls] @ ST[ls] / pair.q.mass[k]
        if np.abs(cond - pair.S[k]).max() > tol * max(1.0, np.abs(pair.S[k]).max()):
            return False
    return True


# ------------------------------------------------------------------ sampling
@dataclass(frozen=True)
class SampledPrice:
    price: PriceSystem
    pair: DualPair
    certificate: NaCertificate

    def to_json(self) -> dict:
        return {**self.price.to_json(), "certificate": self.certificate.to_json()}


MIX_ETA = 1e-3


def sample_price_systems(model: _Model, n: int, seed: int) -> list[SampledPrice]:
    """Vertices of the CPS polytope under seeded random objectives, deduplicated.

    Sample k uses its own child of ``SeedSequence(seed)``, so the k-th draw does
    not depend on ``n``.  A vertex whose terminal cash vanishes somewhere is mixed
    with the strictly consistent witness at weight ``MIX_ETA`` so that the induced
    measure is equivalent.
    """
    if n <= 0:
        return []
    na = robust_na_check(model)
    if not na.holds:
        raise PricingError("consistent price system polytope is empty (robust no-arbitrage fails)")
    lp, nodes, _ = cps_system(model, strict=False)
    tree = model.tree
    out: list[SampledPrice] = []
    seen: set[bytes] = set()
    for child in np.random.SeedSequence(seed).spawn(n):
        rng = np.random.default_rng(child)
        w = rng.standard_normal(lp.A.shape[1])
        w /= np.linalg.norm(w)
        sol = solve(LinearProgram(w, lp.A, lp.rel, lp.b, lp.lb, lp.ub, "max"))
        if not sol.optimal:
            raise PricingError(f"CPS vertex LP {sol.status}")
        Z = np.zeros((tree.n_nodes, model.d))
        Z[nodes] = sol.primal.reshape(len(nodes), model.d)
        sample = _certify(model, Z)
        if sample is None:
            sample = _certify(model, (1 - MIX_ETA) * Z + MIX_ETA * na.witness)
        if sample is None:
            continue
        key = sample.price.key()
        if key not in seen:
            seen.add(key)
            out.append(sample)
    return out


def _certify(model: _Model, Z: np.ndarray) -> SampledPrice | None:
    tree = model.tree
    if (Z[tree.leaves, 0] <= 1e-12).any():
        return None
    pair = cps_to_pair(ConsistentPriceSystem(tree, Z, 0), 0)
    price = pair.price
    if not validate_price_system(price, model).ok:
        return None
    cert = na_check(price)
    if not cert.holds:
        return None
    return SampledPrice(price, pair, cert)


def pair_from_price(price: PriceSystem, q: MeasureQ | None = None) -> DualPair:
    """Pair a price system with a martingale measure (the NA witness by default)."""
    if q is None:
        cert = na_check(price)
        if not cert.holds:
            raise PricingError("price system admits arbitrage")
        q = cert.q
    return DualPair(q, price, 0, "Q^e(S)" if q.kind == "equivalent" else "Q_t")


# ------------------------------------------------------------------ dual norm
def dual_norm(pair: DualPair, t: int, model: _Model) -> np.ndarray:
    """Per time-t node: sup |E_Q[S_T . X | F_t]| over claims with ||X||_{K_t,t} <= 1."""
    tree = model.tree
    q_t = pair.q.rebase(t)
    out = []
    for n in tree.at_time(t):
        M, _ = path_sum_block(model, n, t)
        rows, k = M.shape
        d = model.d
        leaves = tree.subtree_leaves(n)
        L = len(leaves)
        e1 = np.tile(np.eye(d)[0], L)
        # variables [X (L*d), lam (k), mu (k)]; e1 - X = M lam ; X + e1 = M mu
        A = np.zeros((2 * rows, rows + 2 * k))
        A[:rows, :rows] = np.eye(rows)
        A[:rows, rows:rows + k] = M
        A[rows:, :rows] = -np.eye(rows)
        A[rows:, rows + k:] = M
        b = np.concatenate([e1, e1])
        w = q_t.q[leaves] / q_t.mass[n] if q_t.mass[n] > 0 else tree.p_leaf[leaves] / tree.mass[n]
        c = np.zeros(rows + 2 * k)
        c[:rows] = (w[:, None] * pair.S[tree.leaves[leaves]]).reshape(-1)
        lb = np.concatenate([np.full(rows, -np.inf), np.zeros(2 * k)])
        sol = solve(LinearProgram(c, A, [EQ] * (2 * rows), b, lb, np.full(rows + 2 * k, np.inf), "max"))
        if not sol.optimal:
            raise MarketError(f"dual-norm LP {sol.status}")
        out.append(sol.value)
    return np.array(out)
