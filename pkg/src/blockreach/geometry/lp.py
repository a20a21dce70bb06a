"""Dense two-phase primal simplex with Bland's rule.

Solves ``max c.x  s.t.  A x <= b`` over free variables ``x``. Free variables
are split as ``x = x+ - x-`` and every row gets a slack; rows with a negative
right-hand side are flipped and receive an artificial variable for phase one.
Bland's rule (lowest-index entering column, lowest-index leaving basic
variable on ratio ties) guarantees termination on degenerate problems.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import EmptySet, NumericalFailure, Unbounded

FEAS_TOL = 1e-9
PIVOT_TOL = 1e-11
RATIO_PIVOT_TOL = 1e-9
TIE_TOL = 1e-9
REFACTOR_EVERY = 20


@dataclass(frozen=True)
class LPResult:
    value: float
    x: np.ndarray


def _normalize_rows(A, b):
    """Scale every constraint to a unit-norm normal; split off zero rows."""
    norms = np.linalg.norm(A, axis=1)
    zero = norms <= 1e-300
    if np.any(zero & (b < -FEAS_TOL)):
        return None, None
    keep = ~zero
    A = A[keep] / norms[keep, None]
    b = b[keep] / norms[keep]
    return A, b


class _Tableau:
    def __init__(self, A, b):
        m, n = A.shape
        self.n = n
        neg = b < 0
        n_art = int(neg.sum())
        ncols = 2 * n + m + n_art
        T = np.zeros((m, ncols + 1))
        T[:, :n] = A
        T[:, n:2 * n] = -A
        T[:, 2 * n:2 * n + m] = np.eye(m)
        T[:, -1] = b
        T[neg] *= -1.0
        basis = np.arange(2 * n, 2 * n + m)
        art_rows = np.flatnonzero(neg)
        for k, i in enumerate(art_rows):
            col = 2 * n + m + k
            T[i, col] = 1.0
            basis[i] = col
        self.T = T
        self.T0 = T.copy()
        self.basis = basis
        self.n_art = n_art
        self.first_art = 2 * n + m

    @property
    def ncols(self):
        return self.T.shape[1] - 1

    def pivot(self, r, c):
        T = self.T
        T[r] /= T[r, c]
        col = T[:, c].copy()
        col[r] = 0.0
        T -= np.outer(col, T[r])
        self.basis[r] = c

    def refactor(self):
        """Recompute the tableau from the original rows to shed rounding drift."""
        B = self.T0[:, self.basis]
        try:
            self.T = np.linalg.solve(B, self.T0)
        except np.linalg.LinAlgError:
            raise NumericalFailure("singular simplex basis") from None
        rhs = self.T[:, -1]
        rhs[(rhs < 0) & (rhs > -FEAS_TOL)] = 0.0

    def reduced_costs(self, cost):
        cb = cost[self.basis]
        return cost - cb @ self.T[:, :-1]

    def run(self, cost, allowed, max_iter):
        """Maximize ``cost`` over the current basis. Returns False if unbounded."""
        fresh = True
        for it in range(max_iter):
            if it and it % REFACTOR_EVERY == 0:
                self.refactor()
                fresh = True
            red = self.reduced_costs(cost)
            red[~allowed] = 0.0
            # x+ and x- of one variable never share the basis
            split = self.basis[self.basis < 2 * self.n]
            red[np.where(split < self.n, split + self.n, split - self.n)] = 0.0
            candidates = np.flatnonzero(red > PIVOT_TOL)
            if candidates.size == 0:
                if fresh:
                    return True
                # confirm optimality on a drift-free tableau
                self.refactor()
                fresh = True
                continue
            c = candidates[0]
            col = self.T[:, c]
            pos = col > RATIO_PIVOT_TOL
            if not np.any(pos):
                return False
            rhs = np.maximum(self.T[:, -1], 0.0)
            ratios = np.full(col.shape, np.inf)
            ratios[pos] = rhs[pos] / col[pos]
            best = ratios.min()
            ties = np.flatnonzero(ratios <= best + TIE_TOL * max(1.0, abs(best)))
            r = ties[np.argmin(self.basis[ties])]
            self.pivot(r, c)
            fresh = False
        raise NumericalFailure("simplex iteration limit reached")

    def phase_one(self, max_iter):
        if self.n_art == 0:
            return True
        cost = np.zeros(self.ncols)
        cost[self.first_art:] = -1.0
        allowed = np.ones(self.ncols, dtype=bool)
        self.run(cost, allowed, max_iter)
        infeas = -cost[self.basis] @ self.T[:, -1]
        if infeas > FEAS_TOL:
            return False
        # drive zero-level artificials out of the basis
        rows_to_drop = []
        for i, bv in enumerate(self.basis):
            if bv < self.first_art:
                continue
            row = self.T[i, :self.first_art]
            nz = np.flatnonzero(np.abs(row) > PIVOT_TOL)
            if nz.size:
                self.pivot(i, nz[0])
            else:
                rows_to_drop.append(i)
        if rows_to_drop:
            keep = np.setdiff1d(np.arange(self.T.shape[0]), rows_to_drop)
            self.T = self.T[keep]
            self.T0 = self.T0[keep]
            self.basis = self.basis[keep]
        self.T = np.hstack([self.T[:, :self.first_art], self.T[:, -1:]])
        self.T0 = np.hstack([self.T0[:, :self.first_art], self.T0[:, -1:]])
        self.n_art = 0
        return True

    def primal(self):
        z = np.zeros(self.ncols)
        z[self.basis] = self.T[:, -1]
        return z[:self.n] - z[self.n:2 * self.n]


def _max_iter(A):
    m, n = A.shape
    return 50 * (m + 2 * n + 10)


def feasible_point(A, b):
    """Return a point with ``A x <= b`` (up to FEAS_TOL) or None if infeasible."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    n = A.shape[1]
    A, b = _normalize_rows(A, b)
    if A is None:
        return None
    if A.shape[0] == 0:
        return np.zeros(n)
    tab = _Tableau(A, b)
    if not tab.phase_one(_max_iter(A)):
        return None
    return tab.primal()


def maximize(c, A, b):
    """Maximize ``c.x`` subject to ``A x <= b``.

    Raises EmptySet when infeasible and Unbounded when the objective is
    unbounded above.
    """
    c = np.asarray(c, dtype=float)
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    n = c.shape[0]
    A, b = _normalize_rows(A.reshape(-1, n), b.reshape(-1))
    if A is None:
        raise EmptySet("constraint 0.x <= b with b < 0")
    if not np.any(c):
        x = feasible_point(A, b)
        if x is None:
            raise EmptySet("infeasible linear program")
        return LPResult(0.0, x)
    if A.shape[0] == 0:
        raise Unbounded("no constraints")
    tab = _Tableau(A, b)
    it = _max_iter(A)
    if not tab.phase_one(it):
        raise EmptySet("infeasible linear program")
    cost = np.zeros(tab.ncols)
    cost[:n] = c
    cost[n:2 * n] = -c
    allowed = np.ones(tab.ncols, dtype=bool)
    if not tab.run(cost, allowed, it):
        raise Unbounded("linear program unbounded")
    x = tab.primal()
    return LPResult(float(c @ x), x)
