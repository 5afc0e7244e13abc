"""Scalar multivariate risk measures with cash as the eligible asset.

Three acceptance specs are supported:

``shp-proportional``  superhedging in a cone market, A_t = sum_{s>=t} L(K_s)
``shp-convex``        superhedging in a polyhedral region market, A_t = sum_{s>=t} L(C_s)
``avar-composed``     backward composition of one-step average value at risk with levels lambda

Every conditional quantity is computed per time-t node as an ordinary LP on the
subtree rooted at that node.  Infinite values are returned as flags.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .lp import EQ, GE, LE, LinearProgram, feasibility_with_margin, solve
from .market import (ConeMarket, RegionMarket, _Model, cps_leaf_system, in_dual_cone,
                     path_sum_block, support_sigma)
from .pricing import (DualPair, PriceSystem, SampledPrice, is_q_martingale, martingale_rows,
                      na_check)
from .tree import ScenarioTree, xi_bar
from .values import FINITE, MINUS_INF, PLUS_INF, RiskValue, from_extended, node_max

SHP_PROP, SHP_CONVEX, AVAR = "shp-proportional", "shp-convex", "avar-composed"
KINDS = (SHP_PROP, SHP_CONVEX, AVAR)
LEVEL_FLOOR = 1e-3
IDENTITY_TOL = 1e-8


class RiskError(ValueError):
    """Invalid specification, or an LP outcome that contradicts the market assumptions."""


@dataclass(frozen=True)
class RiskSpec:
    kind: str
    levels: np.ndarray | None = None   # (T, d): lambda^s for the step s -> s+1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise RiskError(f"unknown risk spec {self.kind!r}")
        if self.kind == AVAR:
            if self.levels is None:
                raise RiskError("avar-composed needs levels")
            lv = np.atleast_2d(np.asarray(self.levels, dtype=float))
            if (lv < LEVEL_FLOOR - 1e-15).any() or (lv > 1.0).any():
                raise RiskError(f"levels must lie in [{LEVEL_FLOOR}, 1]")
            object.__setattr__(self, "levels", lv)

    @property
    def coherent(self) -> bool:
        return self.kind in (SHP_PROP, AVAR)

    def check_model(self, model: _Model) -> None:
        if self.kind == SHP_CONVEX and not isinstance(model, RegionMarket):
            raise RiskError("shp-convex needs a region market")
        if self.kind == SHP_PROP and not isinstance(model, ConeMarket):
            raise RiskError("shp-proportional needs a cone market")
        if self.kind == AVAR and self.levels.shape != (model.tree.horizon, model.d):
            raise RiskError(f"levels must have shape {(model.tree.horizon, model.d)}")

    def key(self) -> tuple:
        return (self.kind, None if self.levels is None else self.levels.tobytes())


def default_spec(model: _Model) -> RiskSpec:
    return RiskSpec(SHP_CONVEX if isinstance(model, RegionMarket) else SHP_PROP)


def _claim(X, tree: ScenarioTree) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape != (tree.n_leaves, tree.assets):
        raise RiskError(f"claim must have shape {(tree.n_leaves, tree.assets)}, got {X.shape}")
    return X


def cash_claim(tree: ScenarioTree, payoff: Sequence[float]) -> np.ndarray:
    """Terminal claim paying ``payoff`` units of cash and nothing else."""
    X = np.zeros((tree.n_leaves, tree.assets))
    X[:, 0] = np.broadcast_to(np.asarray(payoff, dtype=float), (tree.n_leaves,))
    return X


# ------------------------------------------------------------------- primal
def rho_primal(X, t: int, spec: RiskSpec, model: _Model) -> RiskValue:
    """Minimal F_t-measurable cash making X acceptable, one LP per time-t node."""
    if spec.kind == AVAR:
        raise RiskError("the primal acceptance LP covers the superhedging specs only")
    spec.check_model(model)
    tree = model.tree
    X = _claim(X, tree)
    vals = []
    for n in tree.at_time(t):
        lp = _primal_lp(model, n, t, X[tree.subtree_leaves(n)].reshape(-1))
        sol = solve(lp)
        if not sol.optimal:
            raise RiskError(f"acceptance LP {sol.status} at node {tree.ids[n]}")
        vals.append(sol.value)
    return RiskValue.finite(tree.at_time(t), vals)


def _primal_lp(model: _Model, n: int, t: int, x: np.ndarray) -> LinearProgram:
    def build():
        tree = model.tree
        d = model.d
        if isinstance(model, ConeMarket):
            M, _ = path_sum_block(model, n, t)
            rows, k = M.shape
            e1 = np.tile(np.eye(d)[0], rows // d)
            A = np.hstack([-e1[:, None], M])
            c = np.zeros(1 + k)
            c[0] = 1.0
            lb = np.concatenate([[-np.inf], np.zeros(k)])
            return c, A, [EQ] * rows, lb, np.full(1 + k, np.inf), rows
        # region: z_k free with G_k z_k >= h_k, sum along paths = X + m e1
        sub = [int(k) for k in tree.subtree_nodes(n) if tree.time[k] >= t]
        P = tree.path_matrix(n)
        cols = {int(k): a for a, k in enumerate(tree.subtree_nodes(n))}
        L = P.shape[0]
        nv = 1 + len(sub) * d
        rows_eq = L * d
        n_ineq = sum(len(model.h[k]) for k in sub)
        A = np.zeros((rows_eq + n_ineq, nv))
        A[:rows_eq, 0] = -np.tile(np.eye(d)[0], L)
        r = rows_eq
        b_ineq = []
        for j, k in enumerate(sub):
            blk = slice(1 + j * d, 1 + (j + 1) * d)
            A[:rows_eq, blk] = np.kron(P[:, cols[k]:cols[k] + 1].astype(float), np.eye(d))
            Gk = model.G[k]
            A[r:r + len(Gk), blk] = Gk
            r += len(Gk)
            b_ineq.append(model.h[k])
        c = np.zeros(nv)
        c[0] = 1.0
        rel = [EQ] * rows_eq + [GE] * n_ineq
        return (c, A, rel, np.full(nv, -np.inf), np.full(nv, np.inf), rows_eq,
                np.concatenate(b_ineq) if b_ineq else np.zeros(0))
    parts = model.cached(("primal", n, t), build)
    c, A, rel, lb, ub, rows = parts[:6]
    b = x if len(parts) == 6 else np.concatenate([x, parts[6]])
    return LinearProgram(c, A, rel, b, lb, ub)


# ------------------------------------------------------------------- exact dual
def rho_dual_exact(X, t: int, spec: RiskSpec, model: _Model,
                   min_density: float | None = None) -> RiskValue:
    """Joint LP over consistent price systems on each subtree (value of the dual representation).

    The variables are the terminal values Z_l of a consistent price system on the
    subtree, with Z at inner nodes given by conditional averaging.  ``min_density``
    restricts to dual variables whose terminal cash density is at least that
    value, i.e. to equivalent measures with a uniform margin.
    """
    if spec.kind == AVAR:
        raise RiskError("the exact dual LP covers the superhedging specs only")
    spec.check_model(model)
    tree = model.tree
    X = _claim(X, tree)
    d = model.d
    vals, flags = [], []
    for n in tree.at_time(t):
        lp = _dual_lp(model, n, min_density)
        leaves = tree.subtree_leaves(n)
        p_cond = tree.p_leaf[leaves] / tree.mass[n]
        c = lp.c.copy()
        c[:len(leaves) * d] = -(p_cond[:, None] * X[leaves]).reshape(-1)
        sol = solve(LinearProgram(c, lp.A, lp.rel, lp.b, lp.lb, lp.ub, "max"))
        if sol.status == "infeasible":
            vals.append(0.0); flags.append(MINUS_INF)
        elif sol.status == "unbounded":
            vals.append(0.0); flags.append(PLUS_INF)
        elif sol.optimal:
            vals.append(sol.value); flags.append(FINITE)
        else:
            raise RiskError(f"dual LP {sol.status} at node {tree.ids[n]}")
    return RiskValue(tree.at_time(t), np.array(vals), tuple(flags))


def _dual_lp(model: _Model, n: int, min_density: float | None) -> LinearProgram:
    """Constraint set of the exact dual at node n; the claim enters only through the objective."""
    def build():
        tree = model.tree
        d = model.d
        norm, dual_rows, W = cps_leaf_system(model, n)
        nz = norm.shape[0]
        A = np.vstack([norm[None, :], dual_rows])
        rel = [EQ] + [GE] * len(dual_rows)
        b = np.concatenate([[1.0], np.zeros(len(dual_rows))])
        c = np.zeros(nz)
        lb = np.zeros(nz)
        if min_density is not None:
            lb[0::d] = min_density
        ub = np.full(nz, np.inf)
        if isinstance(model, RegionMarket):
            # + sum_k P(k|n) sigma_k(Z_k), sigma_k(Z) = max{h.u : G^T u = Z, u >= 0}
            nodes = tree.subtree_nodes(n)
            sizes = [model.G[int(k)].shape[0] for k in nodes]
            nu = sum(sizes)
            A = np.hstack([A, np.zeros((A.shape[0], nu))])
            rows, extra_c, off = [], [], nz
            cond = tree.mass[nodes] / tree.mass[n]
            for a, (k, nb) in enumerate(zip(nodes, sizes)):
                G = model.G[int(k)]
                for i in range(d):
                    r = np.zeros(nz + nu)
                    r[i:nz:d] = -W[:, a]
                    r[off:off + nb] = G[:, i]
                    rows.append(r)
                extra_c.append(cond[a] * model.h[int(k)])
                off += nb
            A = np.vstack([A, np.array(rows)])
            rel += [EQ] * len(rows)
            b = np.concatenate([b, np.zeros(len(rows))])
            c = np.concatenate([c, np.concatenate(extra_c)])
            lb = np.concatenate([lb, np.zeros(nu)])
            ub = np.concatenate([ub, np.full(nu, np.inf)])
        return LinearProgram(c, A, rel, b, lb, ub, "max")
    return model.cached(("dual", n, min_density), build)


# ----------------------------------------------------------- pi^S and phi^S
def _pi_template(price: PriceSystem, n: int, t: int, spec: RiskSpec, model: _Model):
    """Constraint rows of the conditional dual set at node n (objective added per claim)."""
    def build():
        tree = model.tree
        S = price.S
        leaves = tree.subtree_leaves(n)
        L = len(leaves)
        pos_leaf = {int(j): a for a, j in enumerate(leaves)}
        sub = [int(k) for k in tree.subtree_nodes(n)]

        def mass_row(k):
            r = np.zeros(L)
            for j in tree.subtree_leaves(k):
                r[pos_leaf[int(j)]] = 1.0
            return r

        rows = [np.ones(L)]
        rel = [EQ]
        rhs = [1.0]
        M = martingale_rows(tree, S, n)
        rows.extend(M); rel.extend([EQ] * len(M)); rhs.extend([0.0] * len(M))
        extra_c = np.zeros(0)
        n_u = 0
        if spec.kind == SHP_PROP:
            # beta is +inf as soon as Q charges a node where S leaves the dual cone
            for k in sub:
                if not in_dual_cone(S[k], model, k):
                    rows.append(mass_row(k)); rel.append(EQ); rhs.append(0.0)
        elif spec.kind == AVAR:
            trans = tree.transition()
            for k in sub:
                s = tree.time[k]
                if s == tree.horizon:
                    continue
                lam = spec.levels[s]
                Rk = mass_row(k)
                for ch in tree.children[k]:
                    Rc = mass_row(ch)
                    for i in range(model.d):
                        rows.append(lam[i] * S[ch, i] * Rc - trans[ch] * S[k, i] * Rk)
                        rel.append(LE); rhs.append(0.0)
        A = np.array(rows)
        if spec.kind == SHP_CONVEX:
            # -beta = sum_k max{h_k . u_k : G_k^T u_k = R(k) S(k), u_k >= 0}
            sizes = [model.G[k].shape[0] for k in sub]
            n_u = sum(sizes)
            A = np.hstack([A, np.zeros((A.shape[0], n_u))])
            new_rows, off, cs = [], L, []
            for k, nb in zip(sub, sizes):
                Rk = mass_row(k)
                for i in range(model.d):
                    r = np.zeros(L + n_u)
                    r[:L] = -S[k, i] * Rk
                    r[off:off + nb] = model.G[k][:, i]
                    new_rows.append(r)
                cs.append(model.h[k])
                off += nb
            A = np.vstack([A, np.array(new_rows)])
            rel = rel + [EQ] * len(new_rows)
            rhs = rhs + [0.0] * len(new_rows)
            extra_c = np.concatenate(cs)
        nv = L + n_u
        lp = LinearProgram(np.zeros(nv), A, rel, np.array(rhs), np.zeros(nv), np.full(nv, np.inf))
        return lp, leaves, extra_c
    return model.cached(("pi", price.key(), n, t, spec.key()), build)


def _strict_ok(price: PriceSystem, n: int, t: int, spec: RiskSpec, model: _Model) -> bool:
    """The conditional dual set at n contains a measure charging every leaf of the subtree."""
    def run():
        if not _global_na(price, model):
            return False
        if spec.kind != AVAR:
            return True
        lp, leaves, _ = _pi_template(price, n, t, spec, model)
        L = len(leaves)
        A = np.vstack([lp.A, np.hstack([np.eye(L), np.zeros((L, lp.A.shape[1] - L))])])
        aug = LinearProgram(lp.c, A, lp.rel + [GE] * L, np.concatenate([lp.b, np.zeros(L)]),
                            lp.lb, lp.ub)
        return feasibility_with_margin(aug, range(lp.A.shape[0], lp.A.shape[0] + L)).feasible
    return model.cached(("pi_strict", price.key(), n, t, spec.key()), run)


def _global_na(price: PriceSystem, model: _Model) -> bool:
    return model.cached(("na", price.key()), lambda: na_check(price).holds)


def pi_S(X, price: PriceSystem, t: int, spec: RiskSpec, model: _Model) -> RiskValue:
    """sup over martingale measures of S of (-beta - E_Q[S_T . X | F_t]), per time-t node."""
    spec.check_model(model)
    tree = model.tree
    X = _claim(X, tree)
    nodes = tree.at_time(t)
    payoff = np.einsum("ij,ij->i", price.terminal, X)
    vals, flags = [], []
    for n in nodes:
        if not _strict_ok(price, n, t, spec, model):
            vals.append(0.0); flags.append(MINUS_INF)
            continue
        lp, leaves, extra_c = _pi_template(price, n, t, spec, model)
        c = np.concatenate([-payoff[leaves], extra_c])
        sol = solve(LinearProgram(c, lp.A, lp.rel, lp.b, lp.lb, lp.ub, "max"))
        if sol.status == "infeasible":
            vals.append(0.0); flags.append(MINUS_INF)
        elif sol.optimal:
            vals.append(sol.value); flags.append(FINITE)
        else:
            raise RiskError(f"pi LP {sol.status} at node {tree.ids[n]}")
    return RiskValue(nodes, np.array(vals), tuple(flags))


def phi_S(payoff, price: PriceSystem, t: int, spec: RiskSpec, model: _Model,
          claim=None) -> RiskValue:
    """Univariate risk of a cash payoff: pi_S of the payoff held in cash.

    When the original claim is passed, the identity phi(S_T . X) = pi(X) is asserted.
    """
    tree = model.tree
    value = pi_S(cash_claim(tree, payoff), price, t, spec, model)
    if claim is not None:
        other = pi_S(claim, price, t, spec, model)
        a, b = value.as_extended(), other.as_extended()
        same_inf = (a == b) | (np.abs(np.nan_to_num(a - b, nan=0.0)) <= IDENTITY_TOL * (1 + np.abs(b)))
        if not same_inf.all():
            raise AssertionError("phi(S_T . X) differs from pi(X)")
    return value


def terminal_payoff(X, price: PriceSystem) -> np.ndarray:
    """S_T . X per leaf."""
    return np.einsum("ij,ij->i", price.terminal, np.asarray(X, dtype=float))


def acceptance_columns(price: PriceSystem, model: _Model, root: int, from_time: int):
    """Variables describing sum_{k on path, time >= from_time} (z_k + gamma_k) on a subtree.

    z_k ranges over the solvency set at k (cone generators or region rows) and
    gamma_k over the frictionless-acceptable trades {g : S_k . g >= 0}.  Returns
    ``(M, G_in, h_in, lb, ub)``: leaf-major terminal sums ``M v`` and membership
    rows ``G_in v >= h_in``.
    """
    def build():
        tree = model.tree
        d = model.d
        P = tree.path_matrix(root)
        sub = tree.subtree_nodes(root)
        blocks, ineq, rhs, lbs = [], [], [], []
        for a, k in enumerate(sub):
            if tree.time[k] < from_time:
                continue
            k = int(k)
            on_path = P[:, a:a + 1].astype(float)
            if isinstance(model, ConeMarket):
                G = model.generators[k]
                blocks.append(("z", np.kron(on_path, G.T), None, None))
            else:
                blocks.append(("z", np.kron(on_path, np.eye(d)), model.G[k], model.h[k]))
            blocks.append(("g", np.kron(on_path, np.eye(d)), price.S[k][None, :], np.zeros(1)))
        nv = sum(b[1].shape[1] for b in blocks)
        M = np.hstack([b[1] for b in blocks])
        off = 0
        for kind, cols, Gk, hk in blocks:
            w = cols.shape[1]
            if Gk is not None:
                r = np.zeros((len(hk), nv))
                r[:, off:off + w] = Gk
                ineq.append(r)
                rhs.append(hk)
            lo = 0.0 if (kind == "z" and isinstance(model, ConeMarket)) else -np.inf
            lbs.append(np.full(w, lo))
            off += w
        G_in = np.vstack(ineq) if ineq else np.zeros((0, nv))
        h_in = np.concatenate(rhs) if rhs else np.zeros(0)
        return M, G_in, h_in, np.concatenate(lbs), np.full(nv, np.inf)
    return model.cached(("accept", price.key(), root, from_time), build)


def pi_primal(X, price: PriceSystem, t: int, spec: RiskSpec, model: _Model) -> RiskValue:
    """Primal route to pi^S: least cash m with X + m e1 acceptable under S-priced trading."""
    if spec.kind == AVAR:
        raise RiskError("the primal pi LP covers the superhedging specs only")
    spec.check_model(model)
    tree = model.tree
    X = _claim(X, tree)
    d = model.d
    vals, flags = [], []
    for n in tree.at_time(t):
        M, G_in, h_in, lb, ub = acceptance_columns(price, model, int(n), t)
        rows = M.shape[0]
        e1 = np.tile(np.eye(d)[0], rows // d)
        nv = M.shape[1]
        A = np.vstack([np.hstack([-e1[:, None], M]), np.hstack([np.zeros((len(h_in), 1)), G_in])])
        b = np.concatenate([X[tree.subtree_leaves(n)].reshape(-1), h_in])
        c = np.zeros(1 + nv)
        c[0] = 1.0
        sol = solve(LinearProgram(c, A, [EQ] * rows + [GE] * len(h_in), b,
                                  np.concatenate([[-np.inf], lb]), np.concatenate([[np.inf], ub])))
        if sol.status == "unbounded":
            vals.append(0.0); flags.append(MINUS_INF)
        elif sol.optimal:
            vals.append(sol.value); flags.append(FINITE)
        else:
            raise RiskError(f"primal pi LP {sol.status} at node {tree.ids[n]}")
    return RiskValue(tree.at_time(t), np.array(vals), tuple(flags))


# ------------------------------------------------------------------- penalties
def penalty_beta(pair: DualPair, t: int, spec: RiskSpec, model: _Model) -> RiskValue:
    """beta_t(Q, S) per time-t node; +inf is returned as a flag."""
    spec.check_model(model)
    tree = model.tree
    if not is_q_martingale(pair):
        raise RiskError("S is not a Q-martingale")
    q_t = pair.q.rebase(t)
    S = pair.S
    nodes = tree.at_time(t)
    if spec.kind == SHP_CONVEX:
        total = np.zeros(len(nodes))
        inf = np.zeros(len(nodes), dtype=bool)
        for s in range(t, tree.horizon + 1):
            sig = support_sigma(q_t, S, t, s, model)
            inf |= np.array([f == MINUS_INF for f in sig.flags])
            total -= sig.raw
        return RiskValue(nodes, np.where(inf, 0.0, total),
                         tuple(PLUS_INF if i else FINITE for i in inf))
    flags = []
    for n in nodes:
        bad = False
        for k in tree.subtree_nodes(n):
            if q_t.mass[k] <= 0:
                continue
            if spec.kind == SHP_PROP:
                bad = not in_dual_cone(S[k], model, k)
            else:
                s = tree.time[k]
                if s < tree.horizon:
                    kids = tree.children[k]
                    ratio = q_t.density[kids] / q_t.density[k]
                    lam = spec.levels[s]
                    bad = bool((lam[None, :] * ratio[:, None] * S[kids]
                                > S[k][None, :] + 1e-12 * (1 + np.abs(S[k]))).any())
            if bad:
                break
        flags.append(PLUS_INF if bad else FINITE)
    return RiskValue(nodes, np.zeros(len(nodes)), tuple(flags))


# -------------------------------------------------------------- sample maxima
@dataclass(frozen=True)
class SampleReport:
    value: RiskValue
    exact: RiskValue | None
    gap: np.ndarray | None

    def to_json(self, ids) -> dict:
        out = {"value": self.value.to_json(ids)}
        if self.gap is not None:
            out["gap"] = {ids[n]: float(g) for n, g in zip(self.value.nodes, self.gap)}
        return out


def _prices(samples) -> list[PriceSystem]:
    return [s.price if isinstance(s, SampledPrice) else s for s in samples]


def rho_from_samples(X, t: int, spec: RiskSpec, model: _Model, samples,
                     exact: RiskValue | None = None) -> SampleReport:
    """Node-wise max of pi_S over sampled price systems and the gap to the exact value."""
    prices = _prices(samples)
    if not prices:
        raise RiskError("no price systems to maximize over")
    value = node_max([pi_S(X, S, t, spec, model) for S in prices])
    if exact is None and spec.kind == SHP_PROP:
        exact = rho_dual_exact(X, t, spec, model)
    elif exact is None and spec.kind == SHP_CONVEX:
        exact = rho_primal(X, t, spec, model)
    gap = None
    if exact is not None and exact.all_finite and value.all_finite:
        gap = exact.values - value.values
    return SampleReport(value, exact, gap)


# ------------------------------------------------------------------- relevance
@dataclass(frozen=True)
class RelevanceResult:
    relevant: bool
    witness: int | None          # leaf position of an atom the measure ignores
    epsilon: float | None


def relevance_check(t: int, spec: RiskSpec, model: _Model,
                    eps_grid: Sequence[float] = (1e-3, 1e-2, 1e-1, 1.0)) -> RelevanceResult:
    """Does a loss of eps cash on any single terminal atom raise rho_t somewhere?"""
    tree = model.tree
    base = rho_primal(np.zeros((tree.n_leaves, tree.assets)), t, spec, model).values
    for j in range(tree.n_leaves):
        for eps in eps_grid:
            X = np.zeros((tree.n_leaves, tree.assets))
            X[j, 0] = -eps
            v = rho_primal(X, t, spec, model).values
            if not (v > base + 1e-9).any():
                return RelevanceResult(False, j, eps)
    return RelevanceResult(True, None, None)


# -------------------------------------------------------------- composed AV@R
def _one_step_lp(price: PriceSystem, k: int, levels: np.ndarray, model: _Model):
    def build():
        tree = model.tree
        S = price.S
        kids = tree.children[k]
        trans = tree.transition()
        C = len(kids)
        d = model.d
        rows, rel, rhs = [np.ones(C)], [EQ], [1.0]
        for i in range(1, d):
            rows.append(S[kids, i]); rel.append(EQ); rhs.append(S[k, i])
        lam = levels[tree.time[k]]
        for a, ch in enumerate(kids):
            for i in range(d):
                r = np.zeros(C)
                r[a] = lam[i] * S[ch, i]
                rows.append(r); rel.append(LE); rhs.append(trans[ch] * S[k, i])
        lp = LinearProgram(np.zeros(C), np.array(rows), rel, np.array(rhs),
                           np.zeros(C), np.full(C, np.inf))
        strict = feasibility_with_margin(
            LinearProgram(lp.c, np.vstack([lp.A, np.eye(C)]), lp.rel + [GE] * C,
                          np.concatenate([lp.b, np.zeros(C)]), lp.lb, lp.ub),
            range(lp.A.shape[0], lp.A.shape[0] + C)).feasible
        return lp, strict
    return model.cached(("avar_step", price.key(), k, levels.tobytes()), build)


def avar_step(values: np.ndarray, price: PriceSystem, k: int, levels: np.ndarray,
              model: _Model) -> float:
    """One-step value sup E_r[V] over the lambda-constrained martingale weights on the children.

    Returns -inf if no strictly positive weights satisfy the constraints.
    """
    lp, strict = _one_step_lp(price, k, levels, model)
    if not strict or not np.isfinite(values).all():
        return -math.inf
    sol = solve(LinearProgram(np.asarray(values, dtype=float), lp.A, lp.rel, lp.b, lp.lb, lp.ub, "max"))
    if not sol.optimal:
        return -math.inf
    return sol.value


def avar_step_primal(values: np.ndarray, price: PriceSystem, k: int, levels: np.ndarray,
                     model: _Model) -> float:
    """Rockafellar-Uryasev style primal of :func:`avar_step`.

    min over (a, theta) of a + sum_c P(c|k) kappa_c (V_c - a - theta . (S'_c - S'_k))^+,
    where kappa_c = min_i S_i(k) / (lambda_i S_i(c)) is the cheapest way to fund the
    excess with one of the assets.  A child at -inf propagates, as in the dual.
    """
    if not np.isfinite(values).all():
        return -math.inf
    tree = model.tree
    S = price.S
    kids = tree.children[k]
    trans = tree.transition()[kids]
    lam = levels[tree.time[k]]
    C, d = len(kids), model.d
    kappa = np.min(S[k][None, :] / (lam[None, :] * S[kids]), axis=1)
    dS = S[kids, 1:] - S[k, 1:]
    # variables [a, theta (d-1), w (C)] ; w_c + a + theta.dS_c >= V_c
    nv = 1 + (d - 1) + C
    A = np.zeros((C, nv))
    A[:, 0] = 1.0
    A[:, 1:d] = dS
    A[:, d:] = np.eye(C)
    c = np.concatenate([[1.0], np.zeros(d - 1), trans * kappa])
    lb = np.concatenate([np.full(d, -np.inf), np.zeros(C)])
    sol = solve(LinearProgram(c, A, [GE] * C, np.asarray(values, dtype=float), lb,
                              np.full(nv, np.inf)))
    if sol.status == "unbounded":
        return -math.inf
    if not sol.optimal:
        raise RiskError(f"AV@R primal LP {sol.status}")
    return sol.value


def avar_recursion(X, price: PriceSystem, levels: np.ndarray, model: _Model,
                   step: Callable = avar_step) -> list[np.ndarray]:
    """Backward composition for one price system; entry s holds values at the time-s nodes."""
    tree = model.tree
    X = _claim(X, tree)
    levels = np.atleast_2d(np.asarray(levels, dtype=float))
    T = tree.horizon
    node_val = np.full(tree.n_nodes, -math.inf)
    node_val[tree.leaves] = -terminal_payoff(X, price)
    for s in range(T - 1, -1, -1):
        for k in tree.at_time(s):
            node_val[k] = step(node_val[tree.children[k]], price, int(k), levels, model)
    return [node_val[tree.at_time(s)] for s in range(T + 1)]


def avar_composed(X, levels, t: int, model: _Model, samples) -> RiskValue:
    """Composed AV@R at time t: node-wise max over samples of the backward recursion.

    Samples whose recursion hits an empty constraint set contribute -inf.
    """
    prices = _prices(samples)
    if not prices:
        raise RiskError("no price systems to maximize over")
    spec = RiskSpec(AVAR, levels)
    spec.check_model(model)
    nodes = model.tree.at_time(t)
    per = [avar_recursion(X, S, spec.levels, model)[t] for S in prices]
    return from_extended(nodes, np.max(per, axis=0))
