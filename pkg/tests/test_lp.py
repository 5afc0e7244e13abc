import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from conerisk.lp import (EQ, GE, LE, LinearProgram, LpBuilder, LpError, dual_value,
                         feasibility_with_margin, residual, solve)

INF = math.inf


def _lp(c, A, rel, b, lb=None, ub=None, sense="min"):
    n = len(c)
    return LinearProgram(c, A, rel, b, lb if lb is not None else np.zeros(n),
                         ub if ub is not None else np.full(n, INF), sense)


# ---------------------------------------------------------------- examples
def test_bound_tight():
    sol = solve(_lp([1.0], [[1.0]], [GE], [3.0], lb=[-INF]))
    assert sol.optimal and sol.value == pytest.approx(3.0)


def test_model_a_emm():
    # 2q + 0.5(1 - q) = 1
    sol = solve(_lp([1.0], [[1.5]], [EQ], [0.5], ub=[1.0], sense="max"))
    assert sol.optimal and sol.primal[0] == pytest.approx(1 / 3)


def test_contradictory_rows_infeasible():
    sol = solve(_lp([0.0], [[1.0], [1.0]], [GE, LE], [1.0, 0.0], lb=[-INF]))
    assert sol.status == "infeasible"


def test_unbounded():
    assert solve(_lp([-1.0, 0.0], [[1.0, -1.0]], [LE], [1.0])).status == "unbounded"


def test_free_and_upper_bounded_variables():
    # max x + y, x <= 2 (bound), y free with x + y <= 5, y >= -3
    sol = solve(_lp([1.0, 1.0], [[1.0, 1.0]], [LE], [5.0], lb=[-INF, -3.0], ub=[2.0, INF],
                    sense="max"))
    assert sol.value == pytest.approx(5.0)


def test_shape_errors():
    with pytest.raises(LpError):
        LinearProgram([1.0, 2.0], [[1.0, 2.0]], [LE, LE], [1.0], [0, 0], [1, 1])
    with pytest.raises(LpError):
        LinearProgram([1.0], [[1.0]], ["<"], [1.0], [0], [1])
    with pytest.raises(LpError):
        LinearProgram([1.0], [[1.0]], [LE], [1.0], [2], [1])


def test_builder_round_trip():
    b = LpBuilder()
    x = b.add_vars(2, lb=0.0, ub=1.0)
    b.add_row(x, [1.0, 1.0], LE, 1.5)
    b.set_objective(x, [1.0, 2.0])
    sol = solve(b.build("max"))
    assert sol.value == pytest.approx(2.5)


def test_margin_examples():
    eq_one = _lp([0.0], [[1.0], [1.0]], [GE, EQ], [0.0, 1.0], lb=[-INF])
    res = feasibility_with_margin(eq_one, [0])
    assert res.feasible and res.margin == pytest.approx(1.0) and res.witness[0] == pytest.approx(1)
    boundary = _lp([0.0], [[1.0], [1.0]], [GE, LE], [0.0, 0.0], lb=[-INF])
    res = feasibility_with_margin(boundary, [0])
    assert not res.feasible and res.margin == pytest.approx(0.0)


def test_margin_model_a_emm():
    # weights q_u, q_d >= 0 (strict), sum 1, martingale 2 q_u + 0.5 q_d = 1
    lp = _lp([0.0, 0.0], [[1, 0], [0, 1], [1, 1], [2, 0.5]], [GE, GE, EQ, EQ], [0, 0, 1, 1],
             lb=[-INF, -INF])
    res = feasibility_with_margin(lp, [0, 1])
    assert res.feasible and np.allclose(res.witness, [1 / 3, 2 / 3])


def test_margin_rejects_non_ge_rows():
    with pytest.raises(LpError):
        feasibility_with_margin(_lp([0.0], [[1.0]], [LE], [1.0]), [0])


# ------------------------------------------------------------------ oracles
@st.composite
def random_lp(draw, max_n=5, max_m=5, bounded=False):
    seed = draw(st.integers(0, 2**31 - 1))
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, max_n + 1))
    m = int(rng.integers(0, max_m + 1))
    A = rng.integers(-4, 5, (m, n)).astype(float)
    b = rng.integers(-4, 8, m).astype(float)
    rel = list(rng.choice([LE, GE, EQ], m, p=[0.45, 0.35, 0.2]))
    c = rng.integers(-5, 6, n).astype(float)
    if bounded:
        lb = rng.integers(-3, 1, n).astype(float)
        ub = lb + rng.integers(1, 5, n)
    else:
        kinds = rng.integers(0, 4, n)
        lb = np.where(kinds == 1, -INF, np.where(kinds == 3, -2.0, 0.0))
        ub = np.where(kinds >= 2, rng.integers(1, 5, n).astype(float), INF)
    sense = "max" if rng.random() < 0.5 else "min"
    return LinearProgram(c, A, rel, b, lb, ub, sense)


def highs(lp):
    sign = -1.0 if lp.sense == "max" else 1.0
    ub_rows = [i for i, r in enumerate(lp.rel) if r != EQ]
    A_ub = np.array([lp.A[i] * (1 if lp.rel[i] == LE else -1) for i in ub_rows]).reshape(-1, lp.A.shape[1])
    b_ub = np.array([lp.b[i] * (1 if lp.rel[i] == LE else -1) for i in ub_rows])
    eq = [i for i, r in enumerate(lp.rel) if r == EQ]
    bounds = [(None if not math.isfinite(l) else l, None if not math.isfinite(u) else u)
              for l, u in zip(lp.lb, lp.ub)]
    kw = dict(A_ub=A_ub if len(ub_rows) else None, b_ub=b_ub if len(ub_rows) else None,
              A_eq=lp.A[eq] if eq else None, b_eq=lp.b[eq] if eq else None,
              bounds=bounds, method="highs")
    res = linprog(sign * lp.c, **kw)
    if res.status == 2:
        # HiGHS may report unbounded programs as infeasible; recheck feasibility alone
        feas = linprog(np.zeros_like(lp.c), **kw)
        return ("unbounded", None) if feas.status == 0 else ("infeasible", None)
    if res.status == 3:
        return "unbounded", None
    return "optimal", sign * res.fun


@settings(max_examples=400, deadline=None)
@given(random_lp())
def test_matches_highs(lp):
    sol = solve(lp)
    status, value = highs(lp)
    assert sol.status == status
    if status == "optimal":
        assert sol.value == pytest.approx(value, rel=1e-7, abs=1e-7)
        assert residual(lp, sol.primal) <= 1e-8


@settings(max_examples=300, deadline=None)
@given(random_lp())
def test_strong_duality_and_complementary_slackness(lp):
    sol = solve(lp)
    if not sol.optimal:
        return
    assert dual_value(lp, sol) == pytest.approx(sol.value, rel=1e-7, abs=1e-7)
    slack = lp.A @ sol.primal - lp.b
    assert np.abs(slack * sol.duals).max(initial=0.0) <= 1e-7


def vertex_enumeration(lp):
    """Best objective over all basic feasible points of a bounded program."""
    n = len(lp.c)
    rows, rhs = [], []
    for a, r, b in zip(lp.A, lp.rel, lp.b):
        if r in (LE, EQ):
            rows.append(a); rhs.append(b)
        if r in (GE, EQ):
            rows.append(-a); rhs.append(-b)
    for j in range(n):
        e = np.eye(n)[j]
        rows += [e, -e]
        rhs += [lp.ub[j], -lp.lb[j]]
    H, h = np.array(rows), np.array(rhs)
    best = None
    for combo in itertools.combinations(range(len(H)), n):
        M = H[list(combo)]
        if abs(np.linalg.det(M)) < 1e-10:
            continue
        x = np.linalg.solve(M, h[list(combo)])
        if (H @ x <= h + 1e-9).all():
            v = float(lp.c @ x)
            if best is None or (v > best if lp.sense == "max" else v < best):
                best = v
    return best


@settings(max_examples=200, deadline=None)
@given(random_lp(max_n=6, max_m=3, bounded=True))
def test_matches_vertex_enumeration(lp):
    sol = solve(lp)
    best = vertex_enumeration(lp)
    if best is None:
        assert sol.status == "infeasible"
    else:
        assert sol.optimal and sol.value == pytest.approx(best, abs=1e-6)


@settings(max_examples=150, deadline=None)
@given(random_lp(), st.integers(-3, 3))
def test_scaling_invariance(lp, k):
    base = solve(lp)
    scaled = solve(lp.scaled(10.0 ** k))
    assert scaled.status == base.status
    if base.optimal:
        assert scaled.value == pytest.approx(base.value * 10.0 ** k, rel=1e-7, abs=1e-7 * 10.0 ** k)


def test_degenerate_program_terminates():
    # classical cycling example under Dantzig pricing without a fallback
    c = [-0.75, 150, -0.02, 6]
    A = [[0.25, -60, -0.04, 9], [0.5, -90, -0.02, 3], [0, 0, 1, 0]]
    sol = solve(_lp(c, A, [LE, LE, LE], [0, 0, 1]))
    assert sol.optimal and sol.value == pytest.approx(-0.05)


def test_deterministic_witness():
    lp = _lp([0.0, 0.0, 0.0], [[1, 1, 1]], [EQ], [1.0])
    a, b = solve(lp), solve(lp)
    assert np.array_equal(a.primal, b.primal)
