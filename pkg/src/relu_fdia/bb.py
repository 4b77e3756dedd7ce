"""Branch-and-bound over binary variables with indicator-aware branching.

Unfixed indicator guards are relaxed through big-M rows; once a guard is fixed
(by branching or by its own bounds) the matching implied constraint is installed
directly and the big-M rows for that indicator are dropped.
"""

from __future__ import annotations

import enum
import heapq
import itertools
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, TextIO

import numpy as np

from .lp import LE, LpBasis, LpProblem, LpStatus, constraint_arrays, solve_lp
from .milp import MilpModel, ModelError, Objective, ObjSense, UnsoundBigM, big_m_rows, ge, le

log = logging.getLogger(__name__)

# 7 h experiment cutoff
DEFAULT_TIME_LIMIT = 25200.0


class MilpStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    TIMED_OUT = "timed_out"
    NODE_LIMIT = "node_limit"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class SolverConfig:
    time_limit: float = DEFAULT_TIME_LIMIT
    feasibility_tol: float = 1e-7
    integrality_tol: float = 1e-6
    node_limit: int = 1_000_000
    branch_rule: str = "most_fractional"
    lex_tol: float = 1e-6
    debug: bool = False

    def __post_init__(self):
        if not self.time_limit > 0 or not self.node_limit > 0:
            raise ValueError("time_limit and node_limit must be positive")
        for name in ("feasibility_tol", "integrality_tol", "lex_tol"):
            v = getattr(self, name)
            if not 0 < v <= 1e-2:
                raise ValueError(f"{name} must lie in (0, 1e-2], got {v}")
        if self.branch_rule != "most_fractional":
            raise ValueError(f"unknown branch rule {self.branch_rule!r}")

    def replace(self, **changes) -> "SolverConfig":
        fields = dict(self.__dict__)
        fields.update(changes)
        return SolverConfig(**fields)


@dataclass
class SolveStats:
    nodes: int = 0
    wall_time: float = 0.0
    peak_open: int = 0
    lp_iterations: int = 0
    lp_solves: int = 0
    levels: list = field(default_factory=list)


@dataclass
class MilpOutcome:
    status: MilpStatus
    values: np.ndarray | None = None
    objectives: list[float] | None = None
    stats: SolveStats = field(default_factory=SolveStats)

    @property
    def has_solution(self) -> bool:
        return self.values is not None

    @property
    def objective(self) -> float | None:
        return None if self.objectives is None else self.objectives[-1]


class MonotoneBoundError(AssertionError):
    pass


# a heuristic maps LP relaxation values to a candidate point for the whole model
Heuristic = Callable[[np.ndarray], "np.ndarray | None"]


class _Relaxation:
    """Fixed-row LP relaxation; nodes differ only in column bounds.

    Indicators with finite big-M get their big-M rows.  Fixing a guard to its
    indicator's value installs a single-variable implied constraint as a bound (the
    big-M row then collapses to the same constraint).  Indicators whose variables
    are unbounded get an auxiliary slack column ``expr - u <= rhs`` that is free
    until the guard is fixed to the matching value, where ``u`` is pinned to 0.
    """

    def __init__(self, model: MilpModel, objective: Objective):
        n = model.num_vars
        self.n = n
        self.binaries = np.array(model.binaries(), dtype=int)
        bounds = model.bounds()
        rows = list(model.constraints)
        aux_rows = []
        # per guard variable: list of (guard_value, action) with action either
        # ("bound", var, lo, hi) or ("aux", column)
        self.actions: dict[int, list] = {}
        for ic in model.indicators:
            acts = self.actions.setdefault(ic.guard, [])
            implied = ic.implied
            if len(implied.expr.terms) == 1:
                (v, coef), = implied.expr.terms.items()
                val = implied.rhs / coef
                sense = implied.sense.value
                if coef < 0 and sense != "=":
                    sense = "<=" if sense == ">=" else ">="
                lo = val if sense in (">=", "=") else -math.inf
                hi = val if sense in ("<=", "=") else math.inf
                acts.append((ic.guard_value, ("bound", v, lo, hi)))
            try:
                rows.extend(big_m_rows(ic, bounds))
            except UnsoundBigM:
                for expr, rhs in _le_parts(implied):
                    col = n + len(aux_rows)
                    aux_rows.append((expr, rhs, col))
                    acts.append((ic.guard_value, ("aux", col)))
        n_aux = len(aux_rows)
        # guards whose implied rows are only enforced once the guard is fixed
        self.aux_guards = sorted(g for g, acts in self.actions.items() if any(a[0] == "aux" for _, a in acts))
        self.n_cols = n + n_aux
        A, b, senses = constraint_arrays(rows, self.n_cols)
        if n_aux:
            A2 = np.zeros((n_aux, self.n_cols))
            for i, (expr, rhs, col) in enumerate(aux_rows):
                for v, coef in expr.terms.items():
                    A2[i, v] = coef
                A2[i, col] = -1.0
            A = np.vstack([A, A2])
            b = np.concatenate([b, [r for _, r, _ in aux_rows]])
            senses = np.concatenate([senses, np.full(n_aux, LE)])
        c = np.zeros(self.n_cols)
        for v, coef in objective.expr.terms.items():
            c[v] = coef
        self.A, self.b, self.senses = A, b, senses
        self.c = c
        self.c0 = objective.expr.constant
        self.maximize = objective.sense is ObjSense.MAXIMIZE
        self.lb = np.concatenate([[v.lower for v in model.vars], np.zeros(n_aux)])
        self.ub = np.concatenate([[v.upper for v in model.vars], np.full(n_aux, np.inf)])
        for g in self.actions:
            if self.lb[g] == self.ub[g]:
                self.fix(self.lb, self.ub, g, self.lb[g])

    def fix(self, lb, ub, var, val) -> bool:
        """Fix ``var`` to ``val`` in place; False when that empties some bound."""
        if not lb[var] <= val <= ub[var]:
            return False
        lb[var] = ub[var] = val
        for guard_value, act in self.actions.get(var, ()):
            if int(round(val)) != guard_value:
                continue
            if act[0] == "bound":
                _, v, lo, hi = act
                lb[v] = max(lb[v], lo)
                ub[v] = min(ub[v], hi)
                if lb[v] > ub[v]:
                    return False
            else:
                ub[act[1]] = 0.0
        return True

    def problem(self, lb: np.ndarray, ub: np.ndarray) -> LpProblem:
        return LpProblem(self.c, self.A, self.senses, self.b, lb, ub, self.maximize, self.c0)


def _le_parts(c):
    if c.sense.value == "<=":
        return [(c.expr, c.rhs)]
    if c.sense.value == ">=":
        return [(-c.expr, -c.rhs)]
    return [(c.expr, c.rhs), (-c.expr, -c.rhs)]


@dataclass(order=True)
class _Node:
    key: float
    seq: int
    depth: int = field(compare=False)
    lb: np.ndarray = field(compare=False, repr=False)
    ub: np.ndarray = field(compare=False, repr=False)
    values: np.ndarray | None = field(compare=False, repr=False)
    basis: LpBasis | None = field(compare=False, repr=False, default=None)


def solve_milp(
    model: MilpModel,
    cfg: SolverConfig | None = None,
    heuristic: Heuristic | None = None,
    start: np.ndarray | None = None,
    trace: TextIO | None = None,
    deadline: float | None = None,
) -> MilpOutcome:
    """Globally optimal solution of a single-objective model.

    ``start`` is an optional known-feasible assignment used as first incumbent;
    ``heuristic`` proposes candidate points from relaxation values; a feasible
    candidate becomes an incumbent and is then polished by the LP over its binary
    assignment.
    """
    cfg = cfg or SolverConfig()
    if len(model.objectives) != 1:
        raise ModelError(
            f"solve_milp needs exactly one objective, model has {len(model.objectives)}; "
            "use lexicographic_solve for ordered objectives"
        )
    return _BranchAndBound(model, cfg, heuristic, trace, deadline).run(start)


class _BranchAndBound:
    def __init__(self, model, cfg, heuristic, trace, deadline):
        self.model = model
        self.cfg = cfg
        self.heuristic = heuristic
        self.trace = trace
        self.t0 = time.perf_counter()
        self.deadline = min(
            self.t0 + cfg.time_limit, deadline if deadline is not None else math.inf
        )
        self.objective = model.objectives[0]
        # internally everything is minimized
        self.sign = -1.0 if self.objective.sense is ObjSense.MAXIMIZE else 1.0
        self.relax = _Relaxation(model, self.objective)
        self.stats = SolveStats()
        self.incumbent: np.ndarray | None = None
        self.best = math.inf
        self.seq = itertools.count()
        self.tried: set = set()

    # -- helpers -------------------------------------------------------------
    def _timed_out(self):
        return time.perf_counter() >= self.deadline

    def _lp(self, lb, ub, warm=None):
        out = solve_lp(self.relax.problem(lb, ub), tol=self.cfg.feasibility_tol, warm=warm)
        self.stats.lp_solves += 1
        self.stats.lp_iterations += out.iterations
        return out

    def _gap(self):
        return self.cfg.feasibility_tol * max(1.0, abs(self.best))

    def _fractional(self, values):
        b = self.relax.binaries
        if len(b) == 0:
            return None
        frac = np.abs(values[b] - np.round(values[b]))
        frac[frac <= self.cfg.integrality_tol] = 0.0
        if not frac.any():
            return None
        # most fractional, lowest VarId on ties
        closeness = np.abs(values[b] - 0.5)
        closeness[frac == 0.0] = np.inf
        return int(b[np.argmin(closeness)])

    def _open_guard(self, lb, ub):
        for g in self.relax.aux_guards:
            if lb[g] < ub[g]:
                return g
        return None

    def _log(self, node_id, depth, bound, decision):
        if self.trace is not None:
            self.trace.write(f"node {node_id} depth {depth} bound {bound:.9g} {decision}\n")

    def _try_assignment(self, lb, ub, assignment, warm=None) -> bool:
        """Fix binaries to ``assignment`` and solve the remaining LP for an incumbent."""
        lb, ub = lb.copy(), ub.copy()
        for v, val in sorted(assignment.items()):
            if not self.relax.fix(lb, ub, v, float(val)):
                return False
        out = self._lp(lb, ub, warm)
        if out.status is not LpStatus.OPTIMAL:
            return False
        self._offer(out.values[: self.relax.n])
        return True

    def _offer(self, values):
        val = self.sign * self.objective.expr.value(values)
        if self.incumbent is None or val < self.best:
            self.best = val
            self.incumbent = np.array(values, dtype=float)

    def _integral_incumbent(self, lb, ub, out):
        b = self.relax.binaries
        fix = {int(v): int(round(out.values[v])) for v in b}
        if not self._try_assignment(lb, ub, fix, out.basis):
            # rounding within tolerance broke feasibility; keep the raw point
            self._offer(out.values[: self.relax.n])

    def _accept_start(self, start):
        start = np.asarray(start, dtype=float)
        b = self.relax.binaries
        if len(b) and np.max(np.abs(start[b] - np.round(start[b]))) > self.cfg.integrality_tol:
            return
        tol = 10 * self.cfg.feasibility_tol * max(1.0, float(np.max(np.abs(start), initial=0.0)))
        if self.model.max_violation(start) <= tol:
            self._offer(start)

    def _run_heuristic(self, node):
        cand = self.heuristic(node.values[: self.relax.n])
        if cand is None:
            return
        b = self.relax.binaries
        key = tuple(np.round(cand[b]).astype(int))
        if key in self.tried:
            return
        self.tried.add(key)
        before = self.best
        self._accept_start(cand)
        if self.best < before:
            fix = {int(v): int(round(cand[v])) for v in b}
            self._try_assignment(self.relax.lb, self.relax.ub, fix, node.basis)

    def _outcome(self, status):
        self.stats.wall_time = time.perf_counter() - self.t0
        if self.incumbent is None:
            return MilpOutcome(status, stats=self.stats)
        obj = float(self.objective.expr.value(self.incumbent))
        return MilpOutcome(status, self.incumbent, [obj], self.stats)

    # -- search ----------------------------------------------------------------
    def run(self, start):
        lb0 = self.relax.lb.copy()
        ub0 = self.relax.ub.copy()
        if start is not None:
            self._accept_start(start)
        heap: list[_Node] = []
        root = self._lp(lb0, ub0)
        self.stats.nodes = 1
        if root.status is LpStatus.UNBOUNDED and self._open_guard(lb0, ub0) is None:
            self._log(0, 0, -math.inf, "unbounded")
            return self._outcome(MilpStatus.UNBOUNDED)
        self._admit(heap, root, lb0, ub0, 0, -math.inf)
        while heap:
            if self._timed_out():
                return self._outcome(MilpStatus.TIMED_OUT)
            if self.stats.nodes >= self.cfg.node_limit:
                return self._outcome(MilpStatus.NODE_LIMIT)
            node = heapq.heappop(heap)
            if node.key >= self.best - self._gap():
                self._log(node.seq, node.depth, node.key, "pruned")
                continue
            if node.values is None:
                # unbounded relaxation: enforce a pending indicator by branching
                var = self._open_guard(node.lb, node.ub)
                self._log(node.seq, node.depth, node.key, f"branch v{var}=unbounded")
            else:
                var = self._fractional(node.values)
                if self.heuristic is not None:
                    self._run_heuristic(node)
                    if node.key >= self.best - self._gap():
                        self._log(node.seq, node.depth, node.key, "pruned")
                        continue
                self._log(node.seq, node.depth, node.key, f"branch v{var}={node.values[var]:.6g}")
            for val in (0.0, 1.0):
                if self._timed_out():
                    break
                lb, ub = node.lb.copy(), node.ub.copy()
                self.stats.nodes += 1
                if not self.relax.fix(lb, ub, var, val):
                    self._log(next(self.seq), node.depth + 1, math.inf, "infeasible")
                    continue
                out = self._lp(lb, ub, node.basis)
                if out.status is LpStatus.UNBOUNDED and self._open_guard(lb, ub) is None:
                    return self._outcome(MilpStatus.UNBOUNDED)
                self._admit(heap, out, lb, ub, node.depth + 1, node.key)
            self.stats.peak_open = max(self.stats.peak_open, len(heap))
        if self.incumbent is None:
            return self._outcome(MilpStatus.INFEASIBLE)
        return self._outcome(MilpStatus.OPTIMAL)

    def _admit(self, heap, out, lb, ub, depth, parent_key):
        """Queue a solved node, or turn it into an incumbent when it is integral."""
        seq = next(self.seq)
        if out.status is LpStatus.INFEASIBLE:
            self._log(seq, depth, math.inf, "infeasible")
            return
        if out.status is LpStatus.UNBOUNDED:
            heapq.heappush(heap, _Node(parent_key, seq, depth, lb, ub, None, None))
            return
        key = self.sign * out.objective
        if self.cfg.debug and key < parent_key - 1e-6 * max(1.0, abs(parent_key)):
            raise MonotoneBoundError(f"child bound {key} improves on parent bound {parent_key}")
        key = max(key, parent_key)
        if key >= self.best - self._gap():
            self._log(seq, depth, key, "pruned")
            return
        if self._fractional(out.values) is None:
            self._log(seq, depth, key, "integral")
            self._integral_incumbent(lb, ub, out)
            return
        heapq.heappush(heap, _Node(key, seq, depth, lb, ub, out.values, out.basis))


def lexicographic_solve(
    model: MilpModel,
    cfg: SolverConfig | None = None,
    heuristic: Heuristic | None = None,
    trace: TextIO | None = None,
) -> MilpOutcome:
    """Optimize objectives in priority order, pinning each attained level within ``lex_tol``."""
    cfg = cfg or SolverConfig()
    if not model.objectives:
        raise ModelError("model has no objective")
    deadline = time.perf_counter() + cfg.time_limit
    work = model.copy()
    stats = SolveStats()
    values = None
    status = MilpStatus.OPTIMAL
    for level, obj in enumerate(model.objectives):
        sub = work.copy()
        sub.set_objectives([obj])
        sub.freeze()
        if trace is not None:
            trace.write(f"level {level} {obj.sense.value}\n")
        out = solve_milp(sub, cfg, heuristic=heuristic, start=values, trace=trace, deadline=deadline)
        stats.levels.append(out)
        stats.nodes += out.stats.nodes
        stats.lp_iterations += out.stats.lp_iterations
        stats.lp_solves += out.stats.lp_solves
        stats.peak_open = max(stats.peak_open, out.stats.peak_open)
        if out.has_solution:
            values = out.values
        if out.status is not MilpStatus.OPTIMAL:
            status = out.status
            break
        attained = obj.expr.value(out.values)
        if obj.sense is ObjSense.MAXIMIZE:
            work.add_constraint(ge(obj.expr, attained - cfg.lex_tol))
        else:
            work.add_constraint(le(obj.expr, attained + cfg.lex_tol))
    stats.wall_time = sum(o.stats.wall_time for o in stats.levels)
    if values is None:
        return MilpOutcome(status, stats=stats)
    objectives = [float(o.expr.value(values)) for o in model.objectives]
    return MilpOutcome(status, values, objectives, stats)
