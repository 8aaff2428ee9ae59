"""Dense two-phase simplex for small linear programs.

Problems are ``min c.x  s.t.  A_ub x <= b_ub,  A_eq x = b_eq`` with free
variables. Bland's rule is used for both the entering and the leaving variable,
which rules out cycling and makes the pivot sequence deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

_PIVOT_TOL = 1e-10
_FEAS_TOL = 1e-9


@dataclass
class LpProblem:
    c: np.ndarray
    a_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    a_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        n = self.c.size
        self.a_ub, self.b_ub = _block(self.a_ub, self.b_ub, n, "inequality")
        self.a_eq, self.b_eq = _block(self.a_eq, self.b_eq, n, "equality")

    @property
    def n(self) -> int:
        return self.c.size


def _block(a, b, n, what):
    if a is None or (np.size(a) == 0 and (b is None or np.size(b) == 0)):
        return np.zeros((0, n)), np.zeros(0)
    a = np.asarray(a, dtype=float)
    a = a.reshape(-1, n) if a.size else np.zeros((0, n))
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.shape[0] != b.shape[0]:
        raise InputError(f"{what} matrix has {a.shape[0]} rows but rhs has {b.shape[0]}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InputError(f"{what} constraints must be finite")
    return a, b


@dataclass
class LpSolution:
    status: str
    x: np.ndarray | None = None
    objective: float | None = None
    iterations: int = 0
    meta: dict = field(default_factory=dict)


class _Tableau:
    """Rows 0..m-1 are constraints, last row is the reduced-cost row; last column is the rhs."""

    def __init__(self, t, basis):
        self.t = t
        self.basis = basis
        self.iterations = 0

    def pivot(self, row, col):
        t = self.t
        t[row] /= t[row, col]
        factor = t[:, col].copy()
        factor[row] = 0.0
        t -= np.outer(factor, t[row])
        t[:, col] = 0.0
        t[row, col] = 1.0
        self.basis[row] = col
        self.iterations += 1

    def run(self, allowed, max_iter):
        """Bland's rule iterations. Returns OPTIMAL or UNBOUNDED."""
        t = self.t
        for _ in range(max_iter):
            cost = t[-1, :-1]
            entering = np.flatnonzero((cost < -_PIVOT_TOL) & allowed)
            if entering.size == 0:
                return OPTIMAL
            col = int(entering[0])
            column = t[:-1, col]
            rows = np.flatnonzero(column > _PIVOT_TOL)
            if rows.size == 0:
                return UNBOUNDED
            ratios = t[rows, -1] / column[rows]
            best = ratios.min()
            ties = rows[ratios <= best + 1e-12 * max(1.0, abs(best))]
            # among tied rows, leave with the smallest basic variable index
            row = int(ties[np.argmin(self.basis[ties])])
            self.pivot(row, col)
        raise RuntimeError("simplex iteration limit reached")


def solve_lp(p: LpProblem, max_iter: int = 50_000) -> LpSolution:
    """Solve ``p`` exactly up to floating point; never raises on infeasible/unbounded."""
    n = p.n
    m_ub, m_eq = p.a_ub.shape[0], p.a_eq.shape[0]
    m = m_ub + m_eq
    if m == 0:
        if np.any(p.c != 0):
            return LpSolution(UNBOUNDED)
        return LpSolution(OPTIMAL, np.zeros(n), 0.0)

    # columns: x+ (n), x- (n), slacks (m_ub), artificials (n_art), rhs
    a = np.zeros((m, 2 * n + m_ub))
    a[:m_ub, :n] = p.a_ub
    a[:m_ub, n:2 * n] = -p.a_ub
    a[:m_ub, 2 * n:] = np.eye(m_ub)
    a[m_ub:, :n] = p.a_eq
    a[m_ub:, n:2 * n] = -p.a_eq
    b = np.concatenate([p.b_ub, p.b_eq])
    neg = b < 0
    a[neg] *= -1
    b = np.abs(b)

    basis = np.full(m, -1)
    for i in range(m_ub):
        if not neg[i]:
            basis[i] = 2 * n + i  # slack is already a feasible basic variable
    need = np.flatnonzero(basis < 0)
    n_struct = 2 * n + m_ub
    n_art = need.size
    t = np.zeros((m + 1, n_struct + n_art + 1))
    t[:m, :n_struct] = a
    t[:m, -1] = b
    for k, i in enumerate(need):
        t[i, n_struct + k] = 1.0
        basis[i] = n_struct + k
    tab = _Tableau(t, basis)

    if n_art:
        t[-1, n_struct:n_struct + n_art] = 1.0
        for i in need:
            t[-1] -= t[i]
        allowed = np.ones(n_struct + n_art, dtype=bool)
        tab.run(allowed, max_iter)
        if -t[-1, -1] > _FEAS_TOL * max(1.0, np.abs(b).max()):
            return LpSolution(INFEASIBLE, iterations=tab.iterations)
        # drive remaining artificials out of the basis or drop redundant rows
        keep = np.ones(m, dtype=bool)
        for i in range(m):
            if tab.basis[i] >= n_struct:
                cand = np.flatnonzero(np.abs(t[i, :n_struct]) > 1e-9)
                if cand.size:
                    tab.pivot(i, int(cand[0]))
                else:
                    keep[i] = False
        rows = np.concatenate([np.flatnonzero(keep), [m]])
        t = np.delete(t[rows], np.s_[n_struct:n_struct + n_art], axis=1)
        tab = _Tableau(t, tab.basis[keep])
        tab.iterations = 0

    cost = np.concatenate([p.c, -p.c, np.zeros(m_ub)])
    t[-1, :] = 0.0
    t[-1, :n_struct] = cost
    for i, j in enumerate(tab.basis):
        if cost[j] != 0.0:
            t[-1] -= cost[j] * t[i]
    status = tab.run(np.ones(n_struct, dtype=bool), max_iter)
    if status == UNBOUNDED:
        return LpSolution(UNBOUNDED, iterations=tab.iterations)
    z = np.zeros(n_struct)
    z[tab.basis] = t[:-1, -1]
    x = z[:n] - z[n:2 * n]
    return LpSolution(OPTIMAL, x, float(p.c @ x), iterations=tab.iterations)


def max_violation(p: LpProblem, x) -> float:
    v = 0.0
    if p.a_ub.shape[0]:
        v = max(v, float(np.max(p.a_ub @ x - p.b_ub)))
    if p.a_eq.shape[0]:
        v = max(v, float(np.max(np.abs(p.a_eq @ x - p.b_eq))))
    return v
