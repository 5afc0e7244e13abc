"""Dense bounded-variable primal simplex.

Every essential infimum or supremum in the package reduces to a small linear
program on a finite tree, so a deterministic textbook solver is enough: two
phases, Dantzig pricing with a Bland fallback, ties broken by lowest index,
and an explicit ``numerically_unstable`` status instead of a silently wrong
answer.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

LE, EQ, GE = "<=", "=", ">="
STRICT_EPS = 1e-9

_PIVOT_TOL = 1e-9
_OPT_TOL = 1e-9
_FEAS_TOL = 1e-8
_REINVERT_EVERY = 64
_HARRIS_TOL = 1e-11


class LpError(ValueError):
    """Malformed program (dimension mismatch, bad bounds, unknown relation)."""


@dataclass
class LinearProgram:
    c: np.ndarray
    A: np.ndarray
    rel: list[str]
    b: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    sense: str = "min"

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        n = self.c.shape[0]
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        self.lb = np.asarray(self.lb, dtype=float).reshape(-1)
        self.ub = np.asarray(self.ub, dtype=float).reshape(-1)
        self.rel = list(self.rel)
        m = self.A.shape[0]
        if self.b.shape[0] != m or len(self.rel) != m:
            raise LpError(f"{m} constraint rows but {self.b.shape[0]} right-hand sides "
                          f"and {len(self.rel)} relations")
        if self.lb.shape[0] != n or self.ub.shape[0] != n:
            raise LpError(f"{n} variables but bounds of length {self.lb.shape[0]}/{self.ub.shape[0]}")
        if bad := [r for r in self.rel if r not in (LE, EQ, GE)]:
            raise LpError(f"unknown relation {bad[0]!r}")
        if self.sense not in ("min", "max"):
            raise LpError(f"sense must be 'min' or 'max', got {self.sense!r}")
        if (self.lb > self.ub).any():
            raise LpError("a lower bound exceeds its upper bound")
        if not (np.isfinite(self.A).all() and np.isfinite(self.b).all() and np.isfinite(self.c).all()):
            raise LpError("program data must be finite")

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape

    def scaled(self, factor: float) -> "LinearProgram":
        """Rows, right-hand sides and objective multiplied by ``factor``."""
        return LinearProgram(self.c * factor, self.A * factor, self.rel, self.b * factor,
                             self.lb, self.ub, self.sense)


@dataclass
class LpSolution:
    status: str
    value: float = math.nan
    primal: np.ndarray = field(default_factory=lambda: np.zeros(0))
    duals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    reduced_costs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


class LpBuilder:
    """Incremental construction of a :class:`LinearProgram` with named variable blocks."""

    def __init__(self):
        self._lb: list[float] = []
        self._ub: list[float] = []
        self._rows: list[tuple[np.ndarray, np.ndarray, str, float]] = []
        self._c: dict[int, float] = {}

    @property
    def n_vars(self) -> int:
        return len(self._lb)

    @property
    def n_rows(self) -> int:
        return len(self._rows)

    def add_vars(self, count: int, lb: float = 0.0, ub: float = math.inf) -> np.ndarray:
        start = len(self._lb)
        self._lb.extend([lb] * count)
        self._ub.extend([ub] * count)
        return np.arange(start, start + count)

    def add_row(self, idx, coef, rel: str, rhs: float) -> int:
        idx = np.atleast_1d(np.asarray(idx, dtype=int))
        coef = np.broadcast_to(np.asarray(coef, dtype=float), idx.shape)
        self._rows.append((idx, np.array(coef), rel, float(rhs)))
        return len(self._rows) - 1

    def set_objective(self, idx, coef) -> None:
        idx = np.atleast_1d(np.asarray(idx, dtype=int))
        coef = np.broadcast_to(np.asarray(coef, dtype=float), idx.shape)
        for i, v in zip(idx, coef):
            self._c[int(i)] = self._c.get(int(i), 0.0) + float(v)

    def build(self, sense: str = "min") -> LinearProgram:
        n = len(self._lb)
        A = np.zeros((len(self._rows), n))
        for r, (idx, coef, _, _) in enumerate(self._rows):
            np.add.at(A[r], idx, coef)
        c = np.zeros(n)
        for i, v in self._c.items():
            c[i] = v
        return LinearProgram(c, A, [r[2] for r in self._rows],
                             np.array([r[3] for r in self._rows]),
                             np.array(self._lb), np.array(self._ub), sense)


# ---------------------------------------------------------------- standard form
@dataclass
class _Standard:
    A: np.ndarray          # rows scaled and sign-normalized, b >= 0
    b: np.ndarray
    c: np.ndarray          # minimization objective (scaled)
    u: np.ndarray          # upper bounds of the standard variables (lower bounds are 0)
    n_struct: int          # columns coming from original variables
    slack_rows: np.ndarray  # row -> slack column or -1
    row_mult: np.ndarray   # standard row = row_mult * original row
    obj_scale: float
    # x_orig = shift + sum over pieces
    shift: np.ndarray
    pieces: list[tuple[int, int, float]]  # (orig var, std column, sign)


def _pow2(x: float) -> float:
    if x <= 0 or not math.isfinite(x):
        return 1.0
    return 2.0 ** (-round(math.log2(x)))


def _standardize(lp: LinearProgram) -> _Standard:
    m, n = lp.A.shape
    cols: list[np.ndarray] = []
    costs: list[float] = []
    ubs: list[float] = []
    pieces: list[tuple[int, int, float]] = []
    shift = np.zeros(n)
    sign_obj = 1.0 if lp.sense == "min" else -1.0
    for j in range(n):
        lo, hi = lp.lb[j], lp.ub[j]
        a = lp.A[:, j]
        cj = sign_obj * lp.c[j]
        if math.isfinite(lo):
            shift[j] = lo
            pieces.append((j, len(cols), 1.0))
            cols.append(a); costs.append(cj); ubs.append(hi - lo)
        elif math.isfinite(hi):
            shift[j] = hi
            pieces.append((j, len(cols), -1.0))
            cols.append(-a); costs.append(-cj); ubs.append(math.inf)
        else:
            pieces.append((j, len(cols), 1.0))
            cols.append(a); costs.append(cj); ubs.append(math.inf)
            pieces.append((j, len(cols), -1.0))
            cols.append(-a); costs.append(-cj); ubs.append(math.inf)
    n_struct = len(cols)
    A = np.column_stack(cols) if cols else np.zeros((m, 0))
    b = lp.b - lp.A @ shift
    slack_rows = np.full(m, -1)
    slack_cols = []
    for i, r in enumerate(lp.rel):
        if r == EQ:
            continue
        col = np.zeros(m)
        col[i] = 1.0 if r == LE else -1.0
        slack_rows[i] = n_struct + len(slack_cols)
        slack_cols.append(col)
    if slack_cols:
        A = np.hstack([A, np.column_stack(slack_cols)])
    costs.extend([0.0] * len(slack_cols))
    ubs.extend([math.inf] * len(slack_cols))
    c = np.array(costs, dtype=float)
    u = np.array(ubs, dtype=float)
    # row normalization: nonnegative rhs, power-of-two scale of the largest entry
    row_mult = np.ones(m)
    for i in range(m):
        big = np.abs(A[i]).max(initial=0.0)
        s = _pow2(big) if big > 0 else 1.0
        # flip to nonnegative rhs; a zero-rhs >= row is flipped too so its slack can start basic
        slack = slack_rows[i]
        if b[i] < 0 or (b[i] == 0 and slack >= 0 and A[i, slack] < 0):
            s = -s
        row_mult[i] = s
    A = A * row_mult[:, None]
    b = b * row_mult
    obj_scale = _pow2(np.abs(c).max(initial=0.0))
    c = c * obj_scale
    return _Standard(A, b, c, u, n_struct, slack_rows, row_mult, obj_scale, shift, pieces)


# ---------------------------------------------------------------- simplex core
class _Tableau:
    def __init__(self, A: np.ndarray, b: np.ndarray, u: np.ndarray, basis: np.ndarray):
        self.m, self.N = A.shape
        self.A = A
        self.b = b
        self.u = u
        self.basis = basis.copy()
        self.at_upper = np.zeros(self.N, dtype=bool)
        self.is_basic = np.zeros(self.N, dtype=bool)
        self.is_basic[basis] = True
        self.T = A.copy()            # initial basis columns are identity columns
        self.xB = b.copy()
        self.iterations = 0

    def reduced_costs(self, c: np.ndarray) -> np.ndarray:
        return c - c[self.basis] @ self.T

    def reinvert(self) -> bool:
        """Rebuild the tableau and basic values from the original data."""
        B = self.A[:, self.basis]
        xN = self.nonbasic_values()
        xN[self.basis] = 0.0
        try:
            self.T = np.linalg.solve(B, self.A)
            self.xB = np.linalg.solve(B, self.b - self.A @ xN)
        except np.linalg.LinAlgError:
            return False
        return True

    def run(self, c: np.ndarray, blocked: np.ndarray, max_iter: int) -> str:
        d = self.reduced_costs(c)
        bland_after = 10 * (self.m + self.N)
        start = self.iterations
        idx = np.arange(self.N)
        since_reinvert = 0
        while True:
            if self.iterations - start > max_iter:
                return "numerically_unstable"
            if since_reinvert >= _REINVERT_EVERY:
                if not self.reinvert():
                    return "numerically_unstable"
                d = self.reduced_costs(c)
                since_reinvert = 0
            movable = ~self.is_basic & ~blocked
            inc = movable & ~self.at_upper & (d < -_OPT_TOL)
            dec = movable & self.at_upper & (d > _OPT_TOL)
            cand = inc | dec
            if not cand.any():
                return "optimal"
            if self.iterations - start < bland_after:
                score = np.where(cand, np.abs(d), -1.0)
                j = int(np.argmax(score))   # argmax returns the lowest index on ties
            else:
                j = int(idx[cand][0])
            direction = 1.0 if inc[j] else -1.0
            alpha = self.T[:, j]
            delta = -direction * alpha      # change of x_B per unit step
            theta, leave, leave_to_upper = self._ratio_test(delta, self.u[j])
            if not math.isfinite(theta):
                if since_reinvert > 0:
                    # confirm on a fresh factorization before declaring unboundedness
                    since_reinvert = _REINVERT_EVERY
                    continue
                return "unbounded"
            self.iterations += 1
            since_reinvert += 1
            self.xB = self.xB + theta * delta
            if leave < 0:
                # bound flip of the entering variable
                self.at_upper[j] = not self.at_upper[j]
                continue
            entering_value = (self.u[j] - theta) if self.at_upper[j] else theta
            out = self.basis[leave]
            self.at_upper[out] = leave_to_upper
            self.is_basic[out] = False
            self.is_basic[j] = True
            self.at_upper[j] = False
            self.basis[leave] = j
            piv = self.T[leave, j]
            self.T[leave] /= piv
            col = self.T[:, j].copy()
            col[leave] = 0.0
            self.T -= np.outer(col, self.T[leave])
            d = d - d[j] * self.T[leave]
            self.xB[leave] = entering_value

    def _ratio_test(self, delta: np.ndarray, theta: float) -> tuple[float, int, bool]:
        """Two-pass (Harris) ratio test: among rows whose ratio is within the
        feasibility tolerance of the smallest, pivot on the largest |delta| so
        that roundoff-sized entries never enter the basis matrix.
        """
        ub_b = self.u[self.basis]
        down = delta < -_PIVOT_TOL
        up = (delta > _PIVOT_TOL) & np.isfinite(ub_b)
        if not (down.any() or up.any()):
            return theta, -1, False
        safe = np.where(down | up, np.abs(delta), 1.0)
        room = np.where(down, self.xB, np.where(up, ub_b - self.xB, math.inf))
        room = np.maximum(room, 0.0)
        relaxed = np.where(down | up, (room + _HARRIS_TOL) / safe, math.inf)
        bound = relaxed.min()
        if bound >= theta:
            return theta, -1, False
        exact = np.where(down | up, room / safe, math.inf)
        cand = np.flatnonzero(exact <= bound)
        if not len(cand):
            cand = np.array([int(np.argmin(exact))])
        size = np.abs(delta[cand])
        best = cand[size >= size.max() * (1 - 1e-12)]
        k = int(best[np.argmin(self.basis[best])])
        return float(exact[k]), k, bool(up[k])

    def nonbasic_values(self) -> np.ndarray:
        x = np.zeros(self.N)
        x[self.at_upper] = self.u[self.at_upper]
        return x

    def refine(self) -> float:
        """Recompute x_B from scratch; return the scaled primal residual."""
        xN = self.nonbasic_values()
        xN[self.basis] = 0.0
        B = self.A[:, self.basis]
        rhs = self.b - self.A @ xN
        try:
            self.xB = np.linalg.solve(B, rhs)
        except np.linalg.LinAlgError:
            return math.inf
        x = xN
        x[self.basis] = self.xB
        return float(np.abs(self.A @ x - self.b).max(initial=0.0))


def solve(lp: LinearProgram) -> LpSolution:
    """Solve ``lp``; status is one of optimal, infeasible, unbounded, numerically_unstable."""
    m, n = lp.A.shape
    if m and n == 0:
        feasible = all(_rel_ok(0.0, r, bi) for r, bi in zip(lp.rel, lp.b))
        if not feasible:
            return LpSolution("infeasible")
    std = _standardize(lp)
    A, b, u = std.A, std.b, std.u
    N0 = A.shape[1]
    basis = np.full(m, -1)
    art_rows = []
    for i in range(m):
        s = std.slack_rows[i]
        if s >= 0 and A[i, s] > 0:
            basis[i] = s
        else:
            art_rows.append(i)
    n_art = len(art_rows)
    if n_art:
        art = np.zeros((m, n_art))
        art[art_rows, np.arange(n_art)] = 1.0
        A = np.hstack([A, art])
        u = np.concatenate([u, np.full(n_art, math.inf)])
        basis[art_rows] = N0 + np.arange(n_art)
    N = A.shape[1]
    tab = _Tableau(A, b, u, basis)
    max_iter = 50 * (m + N) + 1000
    blocked = np.zeros(N, dtype=bool)
    if n_art:
        c1 = np.zeros(N)
        c1[N0:] = 1.0
        status = tab.run(c1, blocked, max_iter)
        if status != "optimal":
            return LpSolution("numerically_unstable", iterations=tab.iterations)
        infeas = float(tab.xB[tab.basis >= N0].sum())
        if infeas > _FEAS_TOL * max(1.0, float(np.abs(b).max(initial=0.0))):
            return LpSolution("infeasible", iterations=tab.iterations)
        # artificials are frozen at zero for phase 2
        tab.u = tab.u.copy()
        tab.u[N0:] = 0.0
        blocked[N0:] = True
        tab.at_upper[N0:] = False
    c = np.concatenate([std.c, np.zeros(N - N0)])
    status = tab.run(c, blocked, max_iter)
    if status != "optimal":
        return LpSolution(status, iterations=tab.iterations)
    resid = tab.refine()
    scale = max(1.0, float(np.abs(b).max(initial=0.0)))
    bound_viol = max(float((-tab.xB).max(initial=0.0)),
                     float((tab.xB - tab.u[tab.basis]).max(initial=0.0)))
    if not resid <= _FEAS_TOL * scale or bound_viol > 1e-7 * scale:
        return LpSolution("numerically_unstable", iterations=tab.iterations)
    xs = tab.nonbasic_values()
    xs[tab.basis] = np.clip(tab.xB, 0.0, tab.u[tab.basis])
    x = std.shift.copy()
    for j, col, sgn in std.pieces:
        x[j] += sgn * xs[col]
    # multipliers of the scaled program, mapped back to the original rows
    B = A[:, tab.basis]
    try:
        y_std = np.linalg.solve(B.T, c[tab.basis])
    except np.linalg.LinAlgError:
        return LpSolution("numerically_unstable", iterations=tab.iterations)
    y = y_std * std.row_mult / std.obj_scale
    if lp.sense == "max":
        y = -y
    value = float(lp.c @ x)
    rc = lp.c - lp.A.T @ y if m else lp.c.copy()
    return LpSolution("optimal", value, x, y, rc, tab.iterations)


def _rel_ok(lhs: float, rel: str, rhs: float, tol: float = _FEAS_TOL) -> bool:
    if rel == LE:
        return lhs <= rhs + tol
    if rel == GE:
        return lhs >= rhs - tol
    return abs(lhs - rhs) <= tol


def dual_value(lp: LinearProgram, sol: LpSolution) -> float:
    """Objective of the dual program at the returned multipliers (for gap checks)."""
    y, rc = sol.duals, sol.reduced_costs
    val = float(lp.b @ y) if len(y) else 0.0
    for j in range(len(rc)):
        if abs(rc[j]) <= 1e-12:
            continue
        # in a min problem rc>0 pins x at its lower bound, rc<0 at its upper bound
        toward_lower = (rc[j] > 0) == (lp.sense == "min")
        bound = lp.lb[j] if toward_lower else lp.ub[j]
        if not math.isfinite(bound):
            return math.inf if (rc[j] > 0) == (lp.sense == "min") else -math.inf
        val += rc[j] * bound
    return val


def residual(lp: LinearProgram, x: np.ndarray) -> float:
    """Largest violation of rows and bounds at ``x``."""
    ax = lp.A @ x
    worst = 0.0
    for a, r, bi in zip(ax, lp.rel, lp.b):
        if r == LE:
            worst = max(worst, a - bi)
        elif r == GE:
            worst = max(worst, bi - a)
        else:
            worst = max(worst, abs(a - bi))
    worst = max(worst, float((lp.lb - x).max(initial=0.0)), float((x - lp.ub).max(initial=0.0)))
    return worst


@dataclass(frozen=True)
class MarginResult:
    feasible: bool
    margin: float
    witness: np.ndarray | None
    status: str = "optimal"


def feasibility_with_margin(lp: LinearProgram, strict_rows: Sequence[int],
                            cap: float = 1.0) -> MarginResult:
    """Maximize eps in [0, cap] subject to ``a.z >= b + eps`` on the strict rows.

    The objective of ``lp`` is ignored.  Strict rows must be ``>=`` rows.
    """
    strict_rows = list(strict_rows)
    for r in strict_rows:
        if lp.rel[r] != GE:
            raise LpError(f"strict row {r} is not a >= row")
    m, n = lp.A.shape
    eps_col = np.zeros((m, 1))
    eps_col[strict_rows, 0] = -1.0
    A = np.hstack([lp.A, eps_col])
    c = np.zeros(n + 1)
    c[-1] = 1.0
    aug = LinearProgram(c, A, lp.rel, lp.b, np.append(lp.lb, 0.0), np.append(lp.ub, cap), "max")
    sol = solve(aug)
    if sol.status == "infeasible":
        return MarginResult(False, 0.0, None, "infeasible")
    if not sol.optimal:
        return MarginResult(False, 0.0, None, sol.status)
    eps = float(sol.primal[-1])
    return MarginResult(eps > STRICT_EPS, eps, sol.primal[:-1])
