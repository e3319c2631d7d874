"""Dense-tableau bounded-variable primal simplex (two phases).

Solves ``min c.x  s.t.  Ax >= b,  l <= x <= u`` for canonical instances.
Rows get surplus columns ``Ax - s = b, s >= 0``; rows whose surplus would
start negative get an artificial column, and phase 1 drives those to zero.
Nonbasic variables sit at a finite bound (free ones at zero), so no big-M
constants or variable splitting are needed.

Pricing is Dantzig's largest reduced cost; after ``DEGENERATE_STREAK``
consecutive zero-length pivots the solver switches to Bland's rule for the
rest of the solve, which guarantees termination.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from srg.milp import MilpInstance

# All numerical tolerances of the LP engine.
FEAS_TOL = 1e-7  # primal feasibility (bounds, phase-1 residual)
OPT_TOL = 1e-9  # reduced-cost optimality
PIVOT_TOL = 1e-9  # smallest usable pivot magnitude
RATIO_TIE = 1e-12  # ratios within this are ties
DEGENERATE_STREAK = 50
REFACTOR_EVERY = 64

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"
NUMERICAL = "numerical"


@dataclass(frozen=True)
class LpLimits:
    max_iterations: int = 20000


@dataclass
class LpResult:
    """Outcome of :func:`solve_lp`.

    ``duals`` follow the ``>=`` convention: one multiplier per row,
    nonnegative at optimality, zero on slack rows.
    ``reduced_costs`` are ``c - A^T duals``.
    """

    status: str
    x: np.ndarray
    objective: float
    duals: np.ndarray
    iterations: int
    reduced_costs: np.ndarray | None = None
    basis: tuple | None = None
    # bounded-LP dual value at ``duals``; equals the Lagrangian bound L(duals)
    # over the continuous box
    dual_objective: float = float("nan")


class _Tableau:
    def __init__(self, M, rhs, lo, hi, basis, x):
        self.M = M  # original constraint columns, m x N
        self.rhs = rhs
        self.lo = lo
        self.hi = hi
        self.basis = np.asarray(basis, dtype=int)
        self.x = x  # full vector; basic entries refreshed from xB
        self.refactor()

    def refactor(self):
        B = self.M[:, self.basis]
        try:
            self.T = np.linalg.solve(B, self.M)
        except np.linalg.LinAlgError:
            raise _Numerical("singular basis")
        nonbasic = np.ones(self.M.shape[1], bool)
        nonbasic[self.basis] = False
        resid = self.rhs - self.M[:, nonbasic] @ self.x[nonbasic]
        self.xB = np.linalg.solve(B, resid)
        self.x[self.basis] = self.xB

    def pivot(self, r, j):
        piv = self.T[r, j]
        self.T[r] /= piv
        col = self.T[:, j].copy()
        col[r] = 0.0
        self.T -= np.outer(col, self.T[r])


class _Numerical(Exception):
    pass


def _run(tab: _Tableau, cost, max_iter, it0, allowed):
    """Primal simplex iterations on ``tab`` for objective ``cost``.

    Returns (status, iterations_used).  ``allowed`` masks columns that may
    enter the basis.
    """
    m, N = tab.T.shape
    it = it0
    bland = False
    streak = 0
    in_basis = np.zeros(N, bool)
    in_basis[tab.basis] = True
    since_refactor = 0
    while True:
        if it >= max_iter:
            return ITERATION_LIMIT, it
        d = cost - cost[tab.basis] @ tab.T
        x = tab.x
        lo, hi = tab.lo, tab.hi
        cand = allowed & ~in_basis & (lo < hi)
        can_inc = x < hi - FEAS_TOL
        can_dec = x > lo + FEAS_TOL
        attractive = cand & (((d < -OPT_TOL) & can_inc) | ((d > OPT_TOL) & can_dec))
        idx = np.flatnonzero(attractive)
        if idx.size == 0:
            return OPTIMAL, it
        j = int(idx[0]) if bland else int(idx[np.argmax(np.abs(d[idx]))])
        direction = 1.0 if d[j] < 0 else -1.0
        col = tab.T[:, j] * direction  # xB decreases by theta * col
        lo_b = lo[tab.basis]
        hi_b = hi[tab.basis]
        ratios = np.full(m, np.inf)
        dec = col > PIVOT_TOL
        inc = col < -PIVOT_TOL
        with np.errstate(invalid="ignore", divide="ignore"):
            ratios[dec] = (tab.xB[dec] - lo_b[dec]) / col[dec]
            ratios[inc] = (hi_b[inc] - tab.xB[inc]) / (-col[inc])
        ratios = np.where(np.isnan(ratios), np.inf, np.maximum(ratios, 0.0))
        theta_flip = hi[j] - lo[j]
        theta_min = ratios.min(initial=np.inf)
        if not np.isfinite(theta_min) and not np.isfinite(theta_flip):
            return UNBOUNDED, it
        it += 1
        if theta_flip <= theta_min:
            # bound flip, basis unchanged
            tab.x[j] = hi[j] if direction > 0 else lo[j]
            tab.xB = tab.xB - theta_flip * col
            tab.x[tab.basis] = tab.xB
            streak = 0 if theta_flip > RATIO_TIE else streak + 1
        else:
            ties = np.flatnonzero(ratios <= theta_min + RATIO_TIE)
            if bland:
                r = int(ties[np.argmin(tab.basis[ties])])
            else:
                r = int(ties[np.argmax(np.abs(col[ties]))])
            leaving = int(tab.basis[r])
            hits_lower = col[r] > 0
            new_xj = x[j] + direction * theta_min
            tab.xB = tab.xB - theta_min * col
            tab.x[leaving] = lo[leaving] if hits_lower else hi[leaving]
            tab.pivot(r, j)
            tab.basis[r] = j
            tab.xB[r] = new_xj
            in_basis[leaving] = False
            in_basis[j] = True
            tab.x[tab.basis] = tab.xB
            streak = streak + 1 if theta_min <= RATIO_TIE else 0
            since_refactor += 1
            if since_refactor >= REFACTOR_EVERY:
                tab.refactor()
                since_refactor = 0
        if streak >= DEGENERATE_STREAK:
            bland = True


def _initial_value(lo, hi):
    x = np.where(np.isfinite(lo), lo, np.where(np.isfinite(hi), hi, 0.0))
    return x.astype(float)


def solve_lp(inst: MilpInstance, limits: LpLimits | None = None,
             lower=None, upper=None) -> LpResult:
    """LP relaxation of a canonical instance (integrality ignored).

    ``lower``/``upper`` override the instance bounds (used by branch and
    bound).  Deterministic: fixed pricing and tie-breaking rules.
    """
    if not inst.is_canonical:
        raise ValueError("solve_lp expects a canonical-min instance (see to_canonical_min)")
    limits = limits or LpLimits()
    A, b, c = inst.A, inst.b, inst.c
    m, n = A.shape
    lo = np.array(inst.lower if lower is None else lower, dtype=float)
    hi = np.array(inst.upper if upper is None else upper, dtype=float)
    if np.any(lo > hi + FEAS_TOL):
        return _fail(INFEASIBLE, n, m, 0)

    x0 = _initial_value(lo, hi)
    if m == 0:
        if np.any((c < 0) & np.isinf(hi)) or np.any((c > 0) & np.isinf(lo)):
            return _fail(UNBOUNDED, n, m, 0)
        x = np.where(c < 0, hi, np.where(c > 0, lo, x0))
        res = LpResult(OPTIMAL, x, float(c @ x), np.zeros(0), 0, reduced_costs=c.copy())
        res.dual_objective = float(c @ x)
        return res

    resid = b - A @ x0
    need_art = resid > 0  # surplus would be negative
    n_art = int(need_art.sum())
    art_rows = np.flatnonzero(need_art)
    N = n + m + n_art
    M = np.zeros((m, N))
    M[:, :n] = A
    M[:, n:n + m] = -np.eye(m)
    if n_art:
        M[art_rows, n + m + np.arange(n_art)] = 1.0
    lo_full = np.concatenate([lo, np.zeros(m), np.zeros(n_art)])
    hi_full = np.concatenate([hi, np.full(m, np.inf), np.full(n_art, np.inf)])
    x_full = np.concatenate([x0, np.zeros(m), np.zeros(n_art)])
    basis = np.where(need_art, 0, n + np.arange(m))
    basis[art_rows] = n + m + np.arange(n_art)

    try:
        tab = _Tableau(M, b, lo_full, hi_full, basis, x_full)
        allowed = np.ones(N, bool)
        it = 0
        if n_art:
            cost1 = np.zeros(N)
            cost1[n + m:] = 1.0
            status, it = _run(tab, cost1, limits.max_iterations, 0, allowed)
            if status == ITERATION_LIMIT:
                return _fail(ITERATION_LIMIT, n, m, it)
            tab.refactor()
            infeas = tab.x[n + m:].sum()
            if infeas > FEAS_TOL * (1.0 + np.abs(b).max()):
                return _fail(INFEASIBLE, n, m, it)
            # pivot remaining (zero-valued) artificials out where possible
            for r in range(m):
                v = tab.basis[r]
                if v < n + m:
                    continue
                row = np.abs(tab.T[r, :n + m])
                row[tab.basis[tab.basis < n + m]] = 0.0
                k = int(np.argmax(row))
                if row[k] > 1e-7:
                    tab.pivot(r, k)
                    tab.basis[r] = k
                    tab.x[v] = 0.0
            lo_full[n + m:] = 0.0
            hi_full[n + m:] = 0.0
            tab.x[n + m:] = 0.0
            tab.refactor()
            allowed[n + m:] = False
        cost2 = np.zeros(N)
        cost2[:n] = c
        status, it = _run(tab, cost2, limits.max_iterations, it, allowed)
        if status != OPTIMAL:
            return _fail(status, n, m, it)
        tab.refactor()
    except (_Numerical, np.linalg.LinAlgError):
        return _fail(NUMERICAL, n, m, 0)

    x = tab.x[:n].copy()
    # clean tiny bound excursions from round-off
    x = np.minimum(np.maximum(x, lo), hi)
    B = M[:, tab.basis]
    try:
        y = np.linalg.solve(B.T, cost2[tab.basis])
    except np.linalg.LinAlgError:
        return _fail(NUMERICAL, n, m, it)
    if np.any(~np.isfinite(x)) or np.any(~np.isfinite(y)):
        return _fail(NUMERICAL, n, m, it)
    slack = A @ x - b
    if slack.min(initial=0.0) < -1e3 * FEAS_TOL * (1.0 + np.abs(b).max()):
        return _fail(NUMERICAL, n, m, it)
    y = np.where(np.abs(y) < 1e-12, 0.0, y)
    rc = c - A.T @ y
    rc = np.where(np.abs(rc) <= OPT_TOL * (1.0 + np.abs(c)), 0.0, rc)
    res = LpResult(OPTIMAL, x, float(c @ x), y, it, reduced_costs=rc,
                   basis=tuple(int(v) for v in tab.basis))
    res.dual_objective = _bounded_dual_value(b, y, rc, lo, hi)
    return res


def _bounded_dual_value(b, y, rc, lo, hi) -> float:
    val = float(b @ y)
    with np.errstate(invalid="ignore"):
        contrib = np.where(rc > 0, rc * lo, np.where(rc < 0, rc * hi, 0.0))
    return float(val + np.sum(contrib))


def _fail(status, n, m, it) -> LpResult:
    return LpResult(status, np.full(n, np.nan), float("nan"), np.full(m, np.nan), it)
