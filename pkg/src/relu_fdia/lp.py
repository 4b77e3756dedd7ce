"""Bounded-variable simplex for dense linear programs.

Every row ``a_i x (<=|=|>=) b_i`` gets a logical variable ``r_i = b_i - a_i x`` whose
bounds encode the sense, so the working system is ``[A | I] (x, r) = b`` with simple
bounds only.

A solve starts from the all-logical basis (or a caller-supplied basis).  When the
nonbasic variables can be parked on bounds that make that basis dual feasible, the
dual simplex restores primal feasibility; otherwise rows that start out of bounds get
explicit artificial variables and a phase-1 primal simplex drives them to zero.  A
primal phase-2 pass (steepest-edge pricing, Bland's rule once degenerate pivots pile
up) always finishes the solve.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .milp import MilpModel, ModelError, ObjSense, Sense

LE, EQ, GE = 0, 1, 2
SENSE_CODE = {Sense.LE: LE, Sense.EQ: EQ, Sense.GE: GE}

OPT_TOL = 1e-9
PIVOT_TOL = 1e-9
REFACTOR_EVERY = 100
# a short pivot run is cleaned up without a fresh factorization
FINAL_REFACTOR_AFTER = 20
COST_PERTURBATION = 1e-6
# basic columns further than this outside their bounds after a solve get a cleanup pass
CLEAN_TOL = 1e-11


class LpStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


class LpIterationLimit(RuntimeError):
    """The simplex exceeded its pivot budget (numerical cycling safeguard)."""


@dataclass
class LpProblem:
    """``min/max c x + c0`` s.t. ``A x (sense) b``, ``lb <= x <= ub``."""

    c: np.ndarray
    A: np.ndarray
    senses: np.ndarray
    b: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    maximize: bool = False
    c0: float = 0.0

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        n = len(self.c)
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        self.senses = np.asarray(self.senses, dtype=int).reshape(-1)
        self.lb = np.asarray(self.lb, dtype=float).reshape(-1)
        self.ub = np.asarray(self.ub, dtype=float).reshape(-1)
        m = self.A.shape[0]
        if len(self.b) != m or len(self.senses) != m:
            raise ValueError("A, b and senses disagree on the number of rows")
        if len(self.lb) != n or len(self.ub) != n:
            raise ValueError("bounds must have one entry per column")
        if np.any(self.lb > self.ub):
            raise ValueError("inconsistent variable bounds")
        if np.any(self.lb == np.inf) or np.any(self.ub == -np.inf):
            raise ValueError("empty variable bounds")
        if not np.all(np.isfinite(self.A)) or not np.all(np.isfinite(self.b)):
            raise ValueError("constraint data must be finite")
        if not np.all(np.isfinite(self.c)):
            raise ValueError("objective must be finite")

    @property
    def num_vars(self) -> int:
        return len(self.c)

    @property
    def num_rows(self) -> int:
        return self.A.shape[0]

    def objective_value(self, x) -> float:
        return float(self.c @ x + self.c0)

    def residuals(self, x) -> np.ndarray:
        """Per-row violation (0 when satisfied)."""
        lhs = self.A @ np.asarray(x, dtype=float)
        return np.select(
            [self.senses == LE, self.senses == GE],
            [np.maximum(lhs - self.b, 0.0), np.maximum(self.b - lhs, 0.0)],
            np.abs(lhs - self.b),
        )

    def max_violation(self, x) -> float:
        x = np.asarray(x, dtype=float)
        worst = 0.0
        if self.num_rows:
            worst = float(self.residuals(x).max())
        if self.num_vars:
            worst = max(worst, float(np.max(self.lb - x)), float(np.max(x - self.ub)))
        return worst

    @classmethod
    def from_model(cls, model: MilpModel, objective: int | None = 0) -> "LpProblem":
        """LP relaxation of an indicator-free model (binaries relaxed to their bounds).

        ``objective=None`` gives a pure feasibility problem.
        """
        if model.indicators:
            raise ModelError("lower or fix indicator constraints before building an LP")
        n = model.num_vars
        c = np.zeros(n)
        c0 = 0.0
        maximize = False
        if objective is not None and model.objectives:
            obj = model.objectives[objective]
            for v, coef in obj.expr.terms.items():
                c[v] = coef
            c0 = obj.expr.constant
            maximize = obj.sense is ObjSense.MAXIMIZE
        A, b, senses = constraint_arrays(model.constraints, n)
        lb = np.array([v.lower for v in model.vars], dtype=float)
        ub = np.array([v.upper for v in model.vars], dtype=float)
        return cls(c, A, senses, b, lb, ub, maximize, c0)


def constraint_arrays(constraints, n):
    m = len(constraints)
    A = np.zeros((m, n))
    b = np.zeros(m)
    senses = np.zeros(m, dtype=int)
    for i, con in enumerate(constraints):
        for v, coef in con.expr.terms.items():
            A[i, v] = coef
        b[i] = con.rhs
        senses[i] = SENSE_CODE[con.sense]
    return A, b, senses


@dataclass
class LpBasis:
    """Basic column per row plus which nonbasic columns sit at their upper bound.

    Columns ``0..n-1`` are structural, ``n..n+m-1`` the row logicals.
    """

    basic: np.ndarray
    at_upper: np.ndarray


@dataclass
class LpOutcome:
    status: LpStatus
    values: np.ndarray | None = None
    objective: float | None = None
    iterations: int = 0
    basis: LpBasis | None = field(default=None, repr=False)
    ray: np.ndarray | None = field(default=None, repr=False)

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


def solve_lp(
    p: LpProblem,
    tol: float = 1e-7,
    max_iter: int | None = None,
    bland_after: int = 200,
    warm: LpBasis | None = None,
) -> LpOutcome:
    """Solve ``p``; raises :class:`LpIterationLimit` when the pivot budget runs out.

    ``warm`` is a basis from an earlier solve of a problem with the same rows: either
    the bounds changed (a branch-and-bound child, restarted with the dual simplex) or
    only the objective did (restarted with the primal simplex).
    """
    if max_iter is None:
        max_iter = 50 * (p.num_rows + p.num_vars) + 1000
    cost = -p.c if p.maximize else p.c
    if warm is not None:
        try:
            tab = _Tableau(p, cost, tol, bland_after, max_iter, warm)
            if tab.primal_feasible():
                # same bounds, new objective
                d = tab.cost - tab.cost[tab.basis] @ tab.T
                return tab.finish(p, tab.primal_phase2(d))
            if tab.dual_feasible():
                return tab.finish(p, tab.dual_simplex())
        except (np.linalg.LinAlgError, LpIterationLimit):
            pass
    tab = _Tableau(p, cost, tol, bland_after, max_iter, None)
    if tab.dual_feasible():
        return tab.finish(p, tab.dual_simplex())
    return tab.finish(p, tab.two_phase())


class _Tableau:
    """Dense tableau ``B^-1 [A | I]`` with explicit values for every column."""

    def __init__(self, p: LpProblem, cost, tol, bland_after, max_iter, warm):
        m, n = p.A.shape
        self.m, self.n = m, n
        self.tol = tol
        self.bland_after = bland_after
        self.max_iter = max_iter
        self.iterations = 0
        self.ray = None
        self.scale = max(1.0, float(np.abs(p.b).max(initial=0.0)))

        log_lo = np.where(p.senses == GE, -np.inf, 0.0)
        log_hi = np.where(p.senses == LE, np.inf, 0.0)
        self.cols = np.hstack([p.A, np.eye(m)])
        self.b = p.b.copy()
        self.lo = np.concatenate([p.lb, log_lo])
        self.hi = np.concatenate([p.ub, log_hi])
        self.cost = np.concatenate([cost, np.zeros(m)])
        self.n_art = 0

        if warm is not None:
            basic = np.array(warm.basic, dtype=int)
            at_upper = np.asarray(warm.at_upper, dtype=bool)
        else:
            basic = n + np.arange(m)
            # park structurals where the slack basis is dual feasible if possible
            at_upper = np.concatenate([cost < 0, np.zeros(m, dtype=bool)])
        self.basis = basic
        self.is_basic = np.zeros(n + m, dtype=bool)
        self.is_basic[basic] = True
        self.x = np.where(at_upper, self.hi, self.lo)
        self.x = np.where(np.isfinite(self.x), self.x, np.where(np.isfinite(self.lo), self.lo, np.where(np.isfinite(self.hi), self.hi, 0.0)))
        self._refactor()

    # -- linear algebra ---------------------------------------------------------
    def _refactor(self):
        B = self.cols[:, self.basis]
        self.T = np.linalg.solve(B, self.cols)
        self.Tb = np.linalg.solve(B, self.b)
        self.stale = 0
        self._recompute_basic()

    def _recompute_basic(self):
        nb = ~self.is_basic
        self.x[self.basis] = self.Tb - self.T[:, nb] @ self.x[nb]

    def _pivot(self, r, q, d):
        T = self.T
        piv = T[r, q]
        T[r] /= piv
        self.Tb[r] /= piv
        col = T[:, q].copy()
        col[r] = 0.0
        rows = np.flatnonzero(col)
        if 2 * len(rows) < self.m:
            T[rows] -= np.outer(col[rows], T[r])
        else:
            T -= np.outer(col, T[r])
        self.Tb -= col * self.Tb[r]
        d -= d[q] * T[r]
        self.stale += 1
        leaving = self.basis[r]
        self.basis[r] = q
        self.is_basic[leaving] = False
        self.is_basic[q] = True
        return leaving

    def _tick(self):
        self.iterations += 1
        if self.iterations > self.max_iter:
            raise LpIterationLimit(f"simplex exceeded {self.max_iter} pivots")

    def primal_feasible(self) -> bool:
        xb = self.x[self.basis]
        return bool(np.all(xb >= self.lo[self.basis] - self.tol) and np.all(xb <= self.hi[self.basis] + self.tol))

    # -- dual simplex ---------------------------------------------------------------
    def dual_feasible(self) -> bool:
        """Move nonbasic columns to the bound their reduced cost asks for, if finite."""
        d = self.cost - self.cost[self.basis] @ self.T
        nb = ~self.is_basic & (self.hi > self.lo)
        want_up = nb & (d < -OPT_TOL)
        want_lo = nb & (d > OPT_TOL)
        if np.any(want_up & ~np.isfinite(self.hi)) or np.any(want_lo & ~np.isfinite(self.lo)):
            return False
        moved = False
        up = want_up & (self.x != self.hi)
        dn = want_lo & (self.x != self.lo)
        if up.any() or dn.any():
            self.x[up] = self.hi[up]
            self.x[dn] = self.lo[dn]
            moved = True
        # free nonbasic columns with zero reduced cost stay where they are
        if moved:
            self._recompute_basic()
        return True

    def dual_simplex(self) -> LpStatus:
        # perturb nonbasic costs in the dual-feasible direction against degeneracy;
        # the closing primal pass works with the true costs
        rng = np.random.default_rng(len(self.x))
        xi = COST_PERTURBATION * (1.0 + np.abs(self.cost)) * rng.uniform(0.5, 1.0, len(self.x))
        nb = ~self.is_basic & (self.hi > self.lo)
        sign = np.where(nb & (self.x == self.lo), 1.0, np.where(nb & (self.x == self.hi), -1.0, 0.0))
        cost = self.cost + sign * xi
        d = cost - cost[self.basis] @ self.T
        since_refactor = 0
        degenerate = 0
        while True:
            xb = self.x[self.basis]
            lob, hib = self.lo[self.basis], self.hi[self.basis]
            below = lob - xb
            above = xb - hib
            infeas = np.maximum(below, above)
            if self.m == 0 or infeas.max() <= self.tol:
                return self.primal_phase2(self.cost - self.cost[self.basis] @ self.T)
            if degenerate >= self.bland_after:
                r = int(np.flatnonzero(infeas > self.tol)[0])
            else:
                # dual steepest edge: row norms of B^-1 sit in the logical columns
                binv = self.T[:, self.n : self.n + self.m]
                weight = np.einsum("ij,ij->i", binv, binv)
                score = np.where(infeas > self.tol, infeas * infeas / weight, 0.0)
                r = int(np.argmax(score))
            raise_it = below[r] > self.tol
            target = lob[r] if raise_it else hib[r]
            alpha = self.T[r]
            movable = ~self.is_basic & (self.hi > self.lo)
            can_inc = movable & (self.x < self.hi)
            can_dec = movable & (self.x > self.lo)
            if raise_it:
                elig = (can_inc & (alpha < -PIVOT_TOL)) | (can_dec & (alpha > PIVOT_TOL))
            else:
                elig = (can_inc & (alpha > PIVOT_TOL)) | (can_dec & (alpha < -PIVOT_TOL))
            cand = np.flatnonzero(elig)
            if len(cand) == 0:
                return LpStatus.INFEASIBLE
            ratios = np.abs(d[cand]) / np.abs(alpha[cand])
            best = ratios.min()
            ties = cand[ratios <= best + OPT_TOL]
            q = int(ties[np.argmax(np.abs(alpha[ties]))])
            self._tick()
            dx = (xb[r] - target) / alpha[q]
            self.x[self.basis] = xb - self.T[:, q] * dx
            self.x[q] += dx
            leaving = self._pivot(r, q, d)
            self.x[leaving] = target
            degenerate = degenerate + 1 if best <= OPT_TOL else 0
            since_refactor += 1
            if since_refactor >= REFACTOR_EVERY:
                self._refactor()
                d = cost - cost[self.basis] @ self.T
                since_refactor = 0

    # -- primal simplex -------------------------------------------------------------
    def two_phase(self) -> LpStatus:
        """Artificial-variable phase 1 from the current basis, then phase 2."""
        xb = self.x[self.basis]
        lob, hib = self.lo[self.basis], self.hi[self.basis]
        clipped = np.clip(xb, lob, hib)
        excess = xb - clipped
        rows = np.flatnonzero(np.abs(excess) > self.tol)
        k = len(rows)
        if k:
            # the artificial replaces the out-of-bounds basic column, which is parked
            # at its nearest bound
            old = self.basis[rows].copy()
            sigma = np.sign(excess[rows])
            ncols = self.cols.shape[1]
            art = np.zeros((self.m, k))
            B = self.cols[:, self.basis]
            art[:, :] = B[:, rows] * sigma
            self.cols = np.hstack([self.cols, art])
            self.lo = np.concatenate([self.lo, np.zeros(k)])
            self.hi = np.concatenate([self.hi, np.full(k, np.inf)])
            self.cost = np.concatenate([self.cost, np.zeros(k)])
            self.x = np.concatenate([self.x, np.abs(excess[rows])])
            self.is_basic = np.concatenate([self.is_basic, np.ones(k, dtype=bool)])
            self.is_basic[old] = False
            self.x[old] = clipped[rows]
            self.basis[rows] = ncols + np.arange(k)
            self.n_art = k
            self._refactor()
            c1 = np.zeros(len(self.x))
            c1[ncols:] = 1.0
            d1 = c1 - c1[self.basis] @ self.T
            self._primal(c1, d1)
            if self.x[ncols:].sum() > self.tol * self.scale:
                return LpStatus.INFEASIBLE
            self.hi[ncols:] = 0.0
            self.x[ncols:] = 0.0
            self._drive_out_artificials(ncols)
            self._recompute_basic()
        d = self.cost - self.cost[self.basis] @ self.T
        return self.primal_phase2(d)

    def _drive_out_artificials(self, first_art):
        for r in np.flatnonzero(self.basis >= first_art):
            row = self.T[r, :first_art]
            cand = np.flatnonzero((np.abs(row) > 1e-7) & ~self.is_basic[:first_art])
            if len(cand):
                q = int(cand[np.argmax(np.abs(row[cand]))])
                dummy = np.zeros(self.T.shape[1])
                self._pivot(r, q, dummy)
        if not np.any(self.basis >= first_art):
            self.cols = self.cols[:, :first_art]
            self.T = self.T[:, :first_art]
            self.lo, self.hi = self.lo[:first_art], self.hi[:first_art]
            self.cost, self.x = self.cost[:first_art], self.x[:first_art]
            self.is_basic = self.is_basic[:first_art]
            self.n_art = 0

    def primal_phase2(self, d) -> LpStatus:
        return self._primal(self.cost, d)

    def _primal(self, c, d) -> LpStatus:
        degenerate = 0
        bland = False
        since_refactor = 0
        while True:
            nb = ~self.is_basic
            movable = nb & (self.hi > self.lo)
            can_up = movable & (self.x < self.hi - self.tol) & (d < -OPT_TOL)
            can_down = movable & (self.x > self.lo + self.tol) & (d > OPT_TOL)
            cand = np.flatnonzero(can_up | can_down)
            if len(cand) == 0:
                return LpStatus.OPTIMAL
            if bland:
                q = int(cand[0])
            else:
                # steepest edge: reduced cost per unit length of the edge direction
                norms = 1.0 + np.einsum("ij,ij->j", self.T[:, cand], self.T[:, cand])
                q = int(cand[np.argmax(d[cand] ** 2 / norms)])
            direction = 1.0 if can_up[q] else -1.0

            alpha = self.T[:, q]
            rate = direction * alpha  # basic values move by -rate * t
            xb = self.x[self.basis]
            lob, hib = self.lo[self.basis], self.hi[self.basis]
            ratios = np.full(self.m, np.inf)
            dec = rate > PIVOT_TOL
            inc = rate < -PIVOT_TOL
            with np.errstate(invalid="ignore"):
                ratios[dec] = (xb[dec] - lob[dec]) / rate[dec]
                ratios[inc] = (hib[inc] - xb[inc]) / -rate[inc]
            ratios = np.maximum(np.nan_to_num(ratios, nan=np.inf, posinf=np.inf), 0.0)
            t_row = ratios.min() if self.m else np.inf
            t_flip = self.hi[q] - self.lo[q]
            if not math.isfinite(t_row) and not math.isfinite(t_flip):
                ray = np.zeros(len(self.x))
                ray[q] = direction
                ray[self.basis] = -rate
                self.ray = ray[: self.n]
                return LpStatus.UNBOUNDED
            self._tick()
            if t_flip <= t_row:
                self.x[self.basis] = xb - rate * t_flip
                self.x[q] = self.hi[q] if direction > 0 else self.lo[q]
                degenerate = 0
                continue

            ties = np.flatnonzero(ratios <= t_row + 1e-12)
            if bland:
                r = int(ties[np.argmin(self.basis[ties])])
            else:
                r = int(ties[np.argmax(np.abs(alpha[ties]))])
            t = ratios[r]
            self.x[self.basis] = xb - rate * t
            self.x[q] += direction * t
            leaving_to_lower = rate[r] > 0
            leaving = self._pivot(r, q, d)
            self.x[leaving] = self.lo[leaving] if leaving_to_lower else self.hi[leaving]

            if t <= self.tol:
                degenerate += 1
                if degenerate >= self.bland_after:
                    bland = True
            else:
                degenerate = 0
            since_refactor += 1
            if since_refactor >= REFACTOR_EVERY:
                self._refactor()
                d[:] = c - c[self.basis] @ self.T
                since_refactor = 0

    def _polish(self):
        """Re-run the dual simplex at a tight tolerance to remove bound excursions of
        basic columns that the working tolerance let through; keeps the old basis
        when that does not settle within a few pivots."""
        xb = self.x[self.basis]
        excess = np.maximum(self.lo[self.basis] - xb, xb - self.hi[self.basis])
        if self.m == 0 or excess.max() <= CLEAN_TOL * self.scale:
            return
        saved = (self.T.copy(), self.Tb.copy(), self.x.copy(), self.basis.copy(), self.is_basic.copy(), self.stale)
        tol, budget, iterations = self.tol, self.max_iter, self.iterations
        self.tol = CLEAN_TOL * self.scale
        self.max_iter = self.iterations + 2 * self.m + 20
        try:
            ok = self.dual_simplex() is LpStatus.OPTIMAL
            if ok:
                self._refactor()
                xb = self.x[self.basis]
                ok = bool(np.all(xb >= self.lo[self.basis] - tol) and np.all(xb <= self.hi[self.basis] + tol))
        except (np.linalg.LinAlgError, LpIterationLimit):
            ok = False
        self.tol, self.max_iter = tol, budget
        if not ok:
            self.T, self.Tb, self.x, self.basis, self.is_basic, self.stale = saved
            self.iterations = iterations

    # -- results --------------------------------------------------------------------
    def finish(self, p: LpProblem, status: LpStatus) -> LpOutcome:
        if status is LpStatus.INFEASIBLE:
            return LpOutcome(status, iterations=self.iterations)
        if status is LpStatus.UNBOUNDED:
            return LpOutcome(status, iterations=self.iterations, ray=self.ray)
        if self.stale > FINAL_REFACTOR_AFTER:
            self._refactor()
        elif self.stale:
            self._recompute_basic()
        if self.n_art == 0:
            self._polish()
        x = self.x[: self.n].copy()
        # snap tolerance-level bound excursions of basic columns
        x = np.clip(x, p.lb, p.ub)
        basis = None
        if self.n_art == 0:
            at_upper = (~self.is_basic) & (self.x == self.hi) & (self.hi > self.lo)
            basis = LpBasis(self.basis.copy(), at_upper)
        return LpOutcome(LpStatus.OPTIMAL, x, p.objective_value(x), self.iterations, basis)
