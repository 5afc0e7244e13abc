"""Time-consistency checks with replayable witnesses.

Every check returns a :class:`TcReport`.  A failing report carries a witness
(claims, times, node) and a ``replay`` callable that recomputes the violation
from scratch.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .lp import EQ, GE, LinearProgram, solve
from .market import ConeMarket, _Model
from .pricing import DualPair, PriceSystem, emm_polytope
from .riskcore import (AVAR, SHP_CONVEX, SHP_PROP, RiskError, RiskSpec, acceptance_columns,
                       cash_claim, penalty_beta, pi_S, rho_dual_exact, rho_primal,
                       terminal_payoff, _prices)
from .tree import MeasureQ, ScenarioTree, cond_expect
from .values import FINITE, RiskValue

DETECT = 1e-6
CERTIFY = 1e-7
ORDER_SLACK = 1e-9


@dataclass
class TcReport:
    check: str
    passed: bool
    worst: float
    witness: dict | None = None
    replay: Callable[[], float] | None = field(default=None, repr=False, compare=False)
    detail: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"check": self.check, "passed": self.passed, "worst": self.worst,
                "witness": _jsonable(self.witness), "detail": _jsonable(self.detail)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else str(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


PiFn = Callable[[np.ndarray, PriceSystem, int, RiskSpec, _Model], RiskValue]


def _check_times(t: int, s: int, tree: ScenarioTree) -> None:
    if not 0 <= t <= s <= tree.horizon:
        raise ValueError(f"need 0 <= t <= s <= T, got t={t}, s={s}")


def _lift_cash(tree: ScenarioTree, values: np.ndarray, s: int) -> np.ndarray:
    return cash_claim(tree, tree.lift(values, s))


def _gap(a: RiskValue, b: RiskValue) -> np.ndarray:
    """|a - b| node-wise; equal infinities count as zero, mismatched flags as inf."""
    ea, eb = a.as_extended(), b.as_extended()
    out = np.zeros(len(ea))
    for k, (x, y) in enumerate(zip(ea, eb)):
        if math.isfinite(x) and math.isfinite(y):
            out[k] = abs(x - y)
        elif x != y:
            out[k] = math.inf
    return out


# ------------------------------------------------------------- pi recursion
def recursion_rhs(X, price: PriceSystem, t: int, s: int, spec: RiskSpec, model: _Model,
                  pi: PiFn = pi_S) -> RiskValue:
    """pi_t([pi_s(0) - pi_s(X)] e1)."""
    tree = model.tree
    zero = np.zeros((tree.n_leaves, tree.assets))
    inner = pi(zero, price, s, spec, model).values - pi(X, price, s, spec, model).values
    return pi(_lift_cash(tree, inner, s), price, t, spec, model)


def pi_recursion_check(X, price: PriceSystem, t: int, s: int, spec: RiskSpec, model: _Model,
                       pi: PiFn = pi_S, tol: float = DETECT) -> TcReport:
    """pi_t(X) = pi_t([pi_s(0) - pi_s(X)] e1) at every time-t node."""
    tree = model.tree
    _check_times(t, s, tree)
    X = np.asarray(X, dtype=float)

    def measure() -> tuple[np.ndarray, RiskValue, RiskValue]:
        lhs = pi(X, price, t, spec, model)
        rhs = recursion_rhs(X, price, t, s, spec, model, pi)
        return _gap(lhs, rhs), lhs, rhs

    gap, lhs, rhs = measure()
    worst = float(gap.max())
    if worst <= tol:
        return TcReport("pi_recursion", True, worst)
    k = int(np.argmax(gap))
    node = int(lhs.nodes[k])
    return TcReport("pi_recursion", False, worst,
                    {"claim": X, "t": t, "s": s, "node": tree.ids[node],
                     "lhs": lhs.as_extended()[k], "rhs": rhs.as_extended()[k]},
                    replay=lambda: float(measure()[0][k]))


def rho_recursion_check(X, t: int, s: int, spec: RiskSpec, model: _Model, samples,
                        pi: PiFn = pi_S, tol: float = DETECT) -> TcReport:
    """max_S pi_t^S(X) against max_S pi_t^S([pi_s^S(0) - pi_s^S(X)] e1)."""
    tree = model.tree
    _check_times(t, s, tree)
    prices = _prices(samples)
    if not prices:
        raise RiskError("no price systems to maximize over")
    X = np.asarray(X, dtype=float)

    def measure():
        lhs = np.max([pi(X, S, t, spec, model).as_extended() for S in prices], axis=0)
        rhs = np.max([recursion_rhs(X, S, t, s, spec, model, pi).as_extended() for S in prices],
                     axis=0)
        gap = np.where(lhs == rhs, 0.0, np.abs(lhs - rhs))
        return gap, lhs, rhs

    gap, lhs, rhs = measure()
    worst = float(gap.max())
    if worst <= tol:
        return TcReport("rho_recursion", True, worst)
    k = int(np.argmax(gap))
    return TcReport("rho_recursion", False, worst,
                    {"claim": X, "t": t, "s": s, "node": tree.ids[tree.at_time(t)[k]],
                     "lhs": lhs[k], "rhs": rhs[k]},
                    replay=lambda: float(measure()[0][k]))


# ----------------------------------------------------------- supermartingale
def value_process(X, pair: DualPair, spec: RiskSpec, model: _Model,
                  pi: PiFn = pi_S) -> list[np.ndarray]:
    """V_t = pi_t^S(X) + beta_t(Q, S) for every t (values at the time-t nodes)."""
    tree = model.tree
    out = []
    for t in range(tree.horizon + 1):
        beta = penalty_beta(pair, t, spec, model)
        if not beta.all_finite:
            raise RiskError(f"penalty is infinite at time {t}; the pair is not admissible")
        out.append(pi(X, pair.price, t, spec, model).values + beta.values)
    return out


def supermartingale_check(X, pair: DualPair, spec: RiskSpec, model: _Model,
                          pi: PiFn = pi_S, tol: float = CERTIFY) -> TcReport:
    """E_Q[V_s | F_t] <= V_t for all t < s."""
    tree = model.tree
    X = np.asarray(X, dtype=float)

    def measure():
        V = value_process(X, pair, spec, model, pi)
        worst, where = -math.inf, None
        for t in range(tree.horizon):
            for s in range(t + 1, tree.horizon + 1):
                ce = cond_expect(pair.q, tree.lift(V[s], s), t)
                excess = ce - V[t]
                k = int(np.argmax(excess))
                if excess[k] > worst:
                    worst, where = float(excess[k]), (t, s, k)
        return worst, where

    worst, (t, s, k) = measure()
    if worst <= tol:
        return TcReport("supermartingale", True, max(worst, 0.0))
    return TcReport("supermartingale", False, worst,
                    {"claim": X, "t": t, "s": s, "node": tree.ids[tree.at_time(t)[k]],
                     "q": pair.q.q},
                    replay=lambda: measure()[0])


# ---------------------------------------------------- acceptance decomposition
def _membership_lp(price: PriceSystem, model: _Model, t: int, s: int, X: np.ndarray):
    """Feasibility of X = X_ts + X_s with X_ts in A_t (F_s-measurable) and X_s in A_s."""
    tree = model.tree
    d = model.d
    parts = []
    for n in tree.at_time(t):
        M1, G1, h1, lb1, ub1 = acceptance_columns(price, model, int(n), t)
        parts.append((n, M1, G1, h1, lb1, ub1))
    # X_ts per time-s node (free), its decomposition from t, and X_s from s
    nodes_s = tree.at_time(s)
    pos_s = {int(k): a for a, k in enumerate(nodes_s)}
    n_xts = len(nodes_s) * d
    blocks_t = parts
    blocks_s = [(k,) + acceptance_columns(price, model, int(k), s) for k in nodes_s]
    widths = [n_xts] + [b[1].shape[1] for b in blocks_t] + [b[1].shape[1] for b in blocks_s]
    nv = sum(widths)
    offs = np.cumsum([0] + widths)
    rows_eq, rhs_eq, rows_in, rhs_in = [], [], [], []
    lb = [np.full(n_xts, -np.inf)]
    ub = [np.full(n_xts, np.inf)]
    anc_s = tree.ancestor(s)
    # X_ts(anc_s(l)) = M1 v1  (leaf-major over each time-t subtree)
    for b_idx, (n, M1, G1, h1, lb1, ub1) in enumerate(blocks_t):
        o = offs[1 + b_idx]
        for a, j in enumerate(tree.subtree_leaves(n)):
            leaf = tree.leaves[j]
            for i in range(d):
                r = np.zeros(nv)
                r[pos_s[int(anc_s[leaf])] * d + i] = 1.0
                r[o:o + M1.shape[1]] = -M1[a * d + i]
                rows_eq.append(r); rhs_eq.append(0.0)
        for g, h in zip(G1, h1):
            r = np.zeros(nv); r[o:o + len(g)] = g
            rows_in.append(r); rhs_in.append(h)
        lb.append(lb1); ub.append(ub1)
    # X_l - X_ts(anc_s(l)) = M2 v2
    for b_idx, (k, M2, G2, h2, lb2, ub2) in enumerate(blocks_s):
        o = offs[1 + len(blocks_t) + b_idx]
        for a, j in enumerate(tree.subtree_leaves(k)):
            for i in range(d):
                r = np.zeros(nv)
                r[pos_s[int(k)] * d + i] = 1.0
                r[o:o + M2.shape[1]] = M2[a * d + i]
                rows_eq.append(r); rhs_eq.append(X[j, i])
        for g, h in zip(G2, h2):
            r = np.zeros(nv); r[o:o + len(g)] = g
            rows_in.append(r); rhs_in.append(h)
        lb.append(lb2); ub.append(ub2)
    A = np.array(rows_eq + rows_in).reshape(-1, nv)
    return LinearProgram(np.zeros(nv), A, [EQ] * len(rows_eq) + [GE] * len(rows_in),
                         np.array(rhs_eq + rhs_in), np.concatenate(lb), np.concatenate(ub))


def split_exists(X, price: PriceSystem, t: int, s: int, model: _Model) -> bool:
    return solve(_membership_lp(price, model, t, s, np.asarray(X, dtype=float))).optimal


def acceptance_decomposition_check(t: int, s: int, price: PriceSystem, spec: RiskSpec,
                                   model: _Model, n_random: int = 20, seed: int = 0,
                                   pi: PiFn = pi_S) -> TcReport:
    """A_t = A_{t,s} + A_s, tested through both inclusions on seeded random claims.

    (a) X shifted into A_t by its own capital requirement must split;
    (b) a sum of shifted members of A_{t,s} and A_s must lie in A_t.
    """
    if spec.kind == AVAR:
        raise RiskError("decomposition LP covers the superhedging specs only")
    tree = model.tree
    _check_times(t, s, tree)
    worst = 0.0
    failures = []
    for trial in range(n_random):
        rng = np.random.default_rng([seed, trial])
        X = rng.standard_normal((tree.n_leaves, tree.assets))
        Xa = X + _lift_cash(tree, pi(X, price, t, spec, model).values, t)
        if not split_exists(Xa, price, t, s, model):
            failures.append({"inclusion": "A_t in A_ts + A_s", "claim": Xa, "trial": trial})
            worst = max(worst, 1.0)
        # a member of A_{t,s}: F_s-measurable claim shifted by its time-t requirement
        Y = rng.standard_normal((len(tree.at_time(s)), tree.assets))[
            _pos_in_time(tree, s)[tree.leaf_ancestor(s)]]
        Yts = Y + _lift_cash(tree, pi(Y, price, t, spec, model).values, t)
        W = rng.standard_normal((tree.n_leaves, tree.assets))
        Ws = W + _lift_cash(tree, pi(W, price, s, spec, model).values, s)
        v = float(pi(Yts + Ws, price, t, spec, model).values.max())
        if v > DETECT:
            failures.append({"inclusion": "A_ts + A_s in A_t", "claim": Yts + Ws, "trial": trial})
            worst = max(worst, v)
    if not failures:
        return TcReport("acceptance_decomposition", True, worst)
    first = failures[0]
    claim = first["claim"]

    def replay():
        if first["inclusion"].startswith("A_t in"):
            return 0.0 if split_exists(claim, price, t, s, model) else 1.0
        return float(pi(claim, price, t, spec, model).values.max())

    return TcReport("acceptance_decomposition", False, worst,
                    {"t": t, "s": s, **first}, replay=replay)


def _pos_in_time(tree: ScenarioTree, s: int) -> np.ndarray:
    pos = np.zeros(tree.n_nodes, dtype=int)
    pos[tree.at_time(s)] = np.arange(len(tree.at_time(s)))
    return pos


# ------------------------------------------------------------ pi-TC on pairs
def pi_tc_pairs_check(price: PriceSystem, t: int, s: int, spec: RiskSpec, model: _Model,
                      n_pairs: int = 50, seed: int = 0, pi: PiFn = pi_S) -> TcReport:
    """pi_s(X) <= pi_s(Y) node-wise must imply pi_t(X) <= pi_t(Y).

    Y is built as a cash position worth at least as much risk as X at time s,
    plus an independent random claim whose order is checked when it happens to hold.
    """
    tree = model.tree
    _check_times(t, s, tree)
    zero = np.zeros((tree.n_leaves, tree.assets))
    base = pi(zero, price, s, spec, model).values
    worst = -math.inf
    witness = None
    for trial in range(n_pairs):
        rng = np.random.default_rng([seed, trial])
        X = rng.standard_normal((tree.n_leaves, tree.assets))
        pis_x = pi(X, price, s, spec, model).values
        u = rng.uniform(0.0, 0.5, len(pis_x)) * (rng.random(len(pis_x)) < 0.5)
        candidates = [_lift_cash(tree, base - pis_x - u, s),
                      rng.standard_normal((tree.n_leaves, tree.assets))]
        for Y in candidates:
            if (pis_x > pi(Y, price, s, spec, model).values + ORDER_SLACK).any():
                continue
            diff = pi(X, price, t, spec, model).values - pi(Y, price, t, spec, model).values
            k = int(np.argmax(diff))
            if diff[k] > worst:
                worst = float(diff[k])
                witness = {"X": X, "Y": Y, "t": t, "s": s, "node": tree.ids[tree.at_time(t)[k]]}
    if worst <= CERTIFY:
        return TcReport("pi_time_consistency", True, max(worst, 0.0))
    X, Y = witness["X"], witness["Y"]
    return TcReport("pi_time_consistency", False, worst, witness,
                    replay=lambda: float((pi(X, price, t, spec, model).values
                                          - pi(Y, price, t, spec, model).values).max()))


def phi_transfer_check(X, Y, price: PriceSystem, t: int, s: int, spec: RiskSpec,
                       model: _Model) -> TcReport:
    """Orderings of (X, Y) under pi and of their payoffs S_T . X under phi coincide."""
    tree = model.tree
    cx = cash_claim(tree, terminal_payoff(X, price))
    cy = cash_claim(tree, terminal_payoff(Y, price))
    worst = 0.0
    for r in (t, s):
        a = pi_S(X, price, r, spec, model).values - pi_S(Y, price, r, spec, model).values
        b = pi_S(cx, price, r, spec, model).values - pi_S(cy, price, r, spec, model).values
        worst = max(worst, float(np.abs(a - b).max()))
    return TcReport("phi_transfer", worst <= 1e-8, worst,
                    None if worst <= 1e-8 else {"X": X, "Y": Y, "t": t, "s": s})


def stability_check(price: PriceSystem, s: int, n_pastings: int = 20, seed: int = 0) -> TcReport:
    """Pasting two martingale measures at time-s nodes stays in the martingale polytope."""
    tree = price.tree
    tpl = emm_polytope(price)
    eq_rows = [i for i, r in enumerate(tpl.lp.rel) if r == EQ]
    A_eq, b_eq = tpl.lp.A[eq_rows], tpl.lp.b[eq_rows]
    worst = 0.0
    witness = None
    for trial in range(n_pastings):
        rng = np.random.default_rng([seed, trial])
        qs = []
        for _ in range(2):
            w = rng.standard_normal(tpl.lp.A.shape[1])
            sol = solve(LinearProgram(w, tpl.lp.A, tpl.lp.rel, tpl.lp.b, tpl.lp.lb, tpl.lp.ub, "max"))
            if not sol.optimal:
                return TcReport("stability", False, math.inf, {"reason": "no martingale measure"})
            qs.append(MeasureQ.from_weights(tree, np.clip(sol.primal, 0, None), renormalize=True))
        q1, q2 = qs
        chosen = rng.random(len(tree.at_time(s))) < 0.5
        anc = tree.leaf_ancestor(s)
        pos = _pos_in_time(tree, s)
        pasted = q1.q.copy()
        for j in range(tree.n_leaves):
            a = anc[j]
            if chosen[pos[a]] and q2.mass[a] > 0:
                pasted[j] = q1.mass[a] * q2.q[j] / q2.mass[a]
        viol = float(np.abs(A_eq @ pasted - b_eq).max())
        if viol > worst:
            worst, witness = viol, {"q1": q1.q, "q2": q2.q, "pasted": pasted, "s": s}
    return TcReport("stability", worst <= 1e-9, worst, None if worst <= 1e-9 else witness)


def beta_cocycle_check(pair: DualPair, t: int, s: int, spec: RiskSpec, model: _Model) -> TcReport:
    """beta_t = beta_{t,s} + E_Q[beta_s | F_t] with the stepped penalty from the times t..s-1.

    Informational for the convex spec: the stepped penalty is the restriction of the
    support-function sum to the times before s.
    """
    from .market import support_sigma
    tree = model.tree
    _check_times(t, s, tree)
    bt = penalty_beta(pair, t, spec, model)
    bs = penalty_beta(pair, s, spec, model)
    if not (bt.all_finite and bs.all_finite):
        return TcReport("beta_cocycle", bt.flags == bs.flags or not bt.all_finite, math.inf,
                        detail={"informational": True})
    stepped = np.zeros(len(bt))
    if spec.kind == SHP_CONVEX:
        q_t = pair.q.rebase(t)
        for r in range(t, s):
            stepped -= support_sigma(q_t, pair.S, t, r, model).values
    rhs = stepped + cond_expect(pair.q, tree.lift(bs.values, s), t)
    worst = float(np.abs(bt.values - rhs).max())
    return TcReport("beta_cocycle", worst <= DETECT, worst, detail={"informational": True})


# ------------------------------------------------------------ rho-TC falsifier
def _rho_search_fn(spec: RiskSpec, model: _Model):
    if spec.kind == SHP_PROP:
        return lambda X, t: rho_dual_exact(X, t, spec, model).values
    if spec.kind == SHP_CONVEX:
        return lambda X, t: rho_primal(X, t, spec, model).values
    raise RiskError("the falsifier covers the superhedging specs")


def _violation(rho, X, Y, t: int, s: int) -> tuple[float, int] | None:
    """Return (magnitude, node position) if (X, Y) breaks rho time consistency."""
    return _ordered_violation(rho(X, s), rho(Y, s), lambda: (rho(X, t), rho(Y, t)))


def _ordered_violation(xs, ys, at_t) -> tuple[float, int] | None:
    if (xs > ys + ORDER_SLACK).any():
        return None
    xt, yt = at_t()
    diff = xt - yt
    k = int(np.argmax(diff))
    return (float(diff[k]), k) if diff[k] > DETECT else None


def structured_candidates(tree: ScenarioTree, s: int) -> list[np.ndarray]:
    """Single-asset claims of both signs, on all leaves and on each time-s subtree."""
    out = []
    for i in range(tree.assets):
        for sign in (-1.0, 1.0):
            X = np.zeros((tree.n_leaves, tree.assets))
            X[:, i] = sign
            out.append(X)
            for k in tree.at_time(s):
                Xk = np.zeros_like(X)
                Xk[tree.subtree_leaves(k), i] = sign
                out.append(Xk)
    return out


def rho_tc_falsify(spec: RiskSpec, model: _Model, trials: int, seed: int = 0) -> TcReport:
    """Search for X, Y and t < s with rho_s(X) <= rho_s(Y) but rho_t(X) > rho_t(Y).

    Each candidate X is paired with its time-s cash equivalent Y = -rho_s(X) e1
    (so the time-s order holds both ways) and both orders are tested.  Structured
    claims come first, then seeded random claims (trial k uses rng([seed, k])).
    The first witness found is re-validated through the primal LP.
    """
    tree = model.tree
    if trials <= 0 or tree.horizon < 1:
        return TcReport("rho_tc_falsify", True, 0.0, detail={"result": "none found", "trials": 0})
    rho = _rho_search_fn(spec, model)
    pairs_tried = 0
    time_pairs = [(t, s) for s in range(1, tree.horizon + 1) for t in range(s)]

    def attempt(X):
        nonlocal pairs_tried
        for t, s in time_pairs:
            xs = rho(X, s)
            Y = _lift_cash(tree, -xs, s)
            ys = rho(Y, s)
            cache = {}

            def at_t():
                if not cache:
                    cache["v"] = (rho(X, t), rho(Y, t))
                return cache["v"]

            for A, B, a_s, b_s, swap in ((X, Y, xs, ys, False), (Y, X, ys, xs, True)):
                pairs_tried += 1
                hit = _ordered_violation(
                    a_s, b_s, (lambda: at_t()[::-1]) if swap else at_t)
                if hit is not None:
                    return A, B, t, s, hit
        return None

    found, origin = None, None
    for s_struct in range(1, tree.horizon + 1):
        for X in structured_candidates(tree, s_struct):
            found = attempt(X)
            if found:
                origin = "structured"
                break
        if found:
            break
    trial = 0
    while found is None and trial < trials:
        rng = np.random.default_rng([seed, trial])
        found = attempt(rng.standard_normal((tree.n_leaves, tree.assets)))
        origin = f"random trial {trial}"
        trial += 1
    if found is None:
        return TcReport("rho_tc_falsify", True, 0.0,
                        detail={"result": "none found", "trials": trials, "pairs": pairs_tried})
    X, Y, t, s, (mag, k) = found
    primal = lambda Z, r: rho_primal(Z, r, spec, model).values
    replayed = _violation(primal, X, Y, t, s)
    witness = {"X": X, "Y": Y, "t": t, "s": s, "node": tree.ids[tree.at_time(t)[k]],
               "rho_t_X": primal(X, t)[k], "rho_t_Y": primal(Y, t)[k],
               "rho_s_X": primal(X, s), "rho_s_Y": primal(Y, s), "origin": origin}
    return TcReport("rho_tc_falsify", False, mag, witness,
                    replay=lambda: (_violation(primal, X, Y, t, s) or (0.0, 0))[0],
                    detail={"result": "witness", "validated": replayed is not None,
                            "pairs": pairs_tried})
