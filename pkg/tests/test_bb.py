import io
import itertools
import re

import numpy as np
import pytest
from scipy.optimize import linprog

from relu_fdia.bb import (
    MilpStatus,
    SolverConfig,
    lexicographic_solve,
    solve_milp,
)
from relu_fdia.lp import LpProblem, solve_lp
from relu_fdia.milp import (
    Indicator,
    LinearExpr,
    MilpModel,
    ModelError,
    Objective,
    ObjSense,
    Sense,
    VarKind,
    VarSpec,
    eq,
    ge,
    le,
)

X = LinearExpr.var
BIN = dict(kind=VarKind.BINARY, lower=0.0, upper=1.0)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(time_limit=0)
    with pytest.raises(ValueError):
        SolverConfig(feasibility_tol=0.1)
    with pytest.raises(ValueError):
        SolverConfig(branch_rule="random")
    assert SolverConfig().time_limit == 25200.0
    assert SolverConfig().replace(node_limit=5).node_limit == 5


def test_no_binaries_equals_lp():
    m = MilpModel()
    x = m.add_var(lower=0, upper=4)
    y = m.add_var(lower=0, upper=4)
    m.add_constraint(le(X(x) + X(y) * 2, 4.0))
    m.add_constraint(le(X(x) * 3 + X(y), 6.0))
    m.add_objective(Objective(ObjSense.MAXIMIZE, X(x) + X(y)))
    m.freeze()
    out = solve_milp(m)
    ref = solve_lp(LpProblem.from_model(m))
    assert out.status is MilpStatus.OPTIMAL
    assert out.objective == pytest.approx(ref.objective, abs=1e-9)


def test_one_binary_example():
    m = MilpModel()
    b = m.add_var(**BIN)
    x = m.add_var(lower=0)
    m.add_constraint(le(X(x) + X(b), 1.0))
    m.add_objective(Objective(ObjSense.MAXIMIZE, X(b) * 3 + X(x)))
    out = solve_milp(m.freeze())
    assert out.status is MilpStatus.OPTIMAL
    assert out.values[b] == pytest.approx(1.0) and out.values[x] == pytest.approx(0.0)
    assert out.objective == pytest.approx(3.0)


def scalar_relu(pre_value):
    m = MilpModel()
    xv = m.add_var(lower=0, upper=10, name="x")
    sv = m.add_var(lower=0, upper=10, name="s")
    ac = m.add_var(name="ac", **BIN)
    m.add_constraint(eq(LinearExpr((), pre_value) - X(xv) + X(sv), 0.0))
    m.add_indicator(Indicator(ac, 1, le(X(xv), 0.0)))
    m.add_indicator(Indicator(ac, 0, le(X(sv), 0.0)))
    m.add_objective(Objective(ObjSense.MINIMIZE, X(xv) + X(sv)))
    return m.freeze(), xv, sv, ac


def test_scalar_relu_forced_negative():
    m, xv, sv, ac = scalar_relu(-3.0)
    out = solve_milp(m)
    assert out.status is MilpStatus.OPTIMAL
    assert out.values[[xv, sv, ac]].tolist() == pytest.approx([0.0, 3.0, 1.0])


def test_needs_single_objective():
    m = MilpModel()
    m.add_var()
    with pytest.raises(ModelError):
        solve_milp(m.freeze())


def test_infeasible_and_unbounded():
    m = MilpModel()
    b = m.add_var(**BIN)
    m.add_constraint(ge(X(b), 0.3))
    m.add_constraint(le(X(b), 0.7))
    m.add_objective(Objective(ObjSense.MINIMIZE, X(b)))
    assert solve_milp(m.freeze()).status is MilpStatus.INFEASIBLE

    m = MilpModel()
    x = m.add_var(lower=0)
    b = m.add_var(**BIN)
    m.add_objective(Objective(ObjSense.MAXIMIZE, X(x) + X(b)))
    assert solve_milp(m.freeze()).status is MilpStatus.UNBOUNDED


# -- enumeration oracle -----------------------------------------------------------------


def random_model(rng, n_bin, with_indicators=True):
    m = MilpModel()
    cont = [m.add_var(lower=float(rng.uniform(-2, 0)), upper=float(rng.uniform(0, 2))) for _ in range(4)]
    bins = [m.add_var(**BIN) for _ in range(n_bin)]
    for _ in range(3):
        terms = [(rng.uniform(-1, 1), v) for v in cont] + [(rng.uniform(-1, 1), g) for g in bins]
        m.add_constraint(le(LinearExpr(terms), float(rng.uniform(0, 2))))
    if with_indicators:
        for g in bins:
            if rng.random() < 0.7:
                vs = rng.choice(cont, size=int(rng.integers(1, 3)), replace=False)
                expr = LinearExpr([(rng.uniform(-1, 1), int(v)) for v in vs])
                c = [le, ge][int(rng.integers(0, 2))](expr, float(rng.uniform(-0.3, 0.3)))
                m.add_indicator(Indicator(g, int(rng.integers(0, 2)), c))
    obj = LinearExpr([(rng.uniform(-1, 1), v) for v in cont + bins])
    m.add_objective(Objective(ObjSense.MAXIMIZE if rng.random() < 0.5 else ObjSense.MINIMIZE, obj))
    return m.freeze(), bins


def enumerate_optimum(m, bins):
    """Best objective over every binary assignment, each solved as an LP by scipy."""
    n = m.num_vars
    obj = m.objectives[0]
    sign = -1.0 if obj.sense is ObjSense.MAXIMIZE else 1.0
    c = np.zeros(n)
    for v, k in obj.expr.terms.items():
        c[v] = sign * k
    best = None
    for bits in itertools.product((0.0, 1.0), repeat=len(bins)):
        fixed = dict(zip(bins, bits))
        cons = list(m.constraints) + [ic.implied for ic in m.indicators if fixed[ic.guard] == ic.guard_value]
        A_ub, b_ub, A_eq, b_eq = [], [], [], []
        for con in cons:
            row = np.zeros(n)
            for v, k in con.expr.terms.items():
                row[v] = k
            if con.sense is Sense.LE:
                A_ub.append(row), b_ub.append(con.rhs)
            elif con.sense is Sense.GE:
                A_ub.append(-row), b_ub.append(-con.rhs)
            else:
                A_eq.append(row), b_eq.append(con.rhs)
        bounds = [(fixed[i], fixed[i]) if i in fixed else (v.lower, v.upper) for i, v in enumerate(m.vars)]
        res = linprog(
            c,
            A_ub=np.array(A_ub) if A_ub else None,
            b_ub=b_ub or None,
            A_eq=np.array(A_eq) if A_eq else None,
            b_eq=b_eq or None,
            bounds=bounds,
            method="highs",
        )
        if res.status == 0:
            val = sign * res.fun + obj.expr.constant
            if best is None or sign * val < sign * best:
                best = val
    return best


@pytest.mark.parametrize("seed", range(40))
def test_matches_binary_enumeration(seed):
    rng = np.random.default_rng(seed)
    m, bins = random_model(rng, n_bin=int(rng.integers(1, 11)), with_indicators=seed % 4 != 0)
    want = enumerate_optimum(m, bins)
    out = solve_milp(m, SolverConfig(debug=True))
    if want is None:
        assert out.status is MilpStatus.INFEASIBLE
        return
    assert out.status is MilpStatus.OPTIMAL
    assert out.objective == pytest.approx(want, abs=1e-6)
    assert m.max_violation(out.values) <= 1e-6
    b = out.values[bins]
    assert np.all(np.minimum(np.abs(b), np.abs(b - 1)) <= 1e-6)


def test_start_incumbent_and_heuristic_are_used():
    rng = np.random.default_rng(4)
    m, bins = random_model(rng, 8)
    plain = solve_milp(m)
    seen = []

    def heuristic(values):
        seen.append(values)
        return plain.values

    out = solve_milp(m, heuristic=heuristic, start=plain.values)
    assert out.status is MilpStatus.OPTIMAL
    assert out.objective == pytest.approx(plain.objective, abs=1e-9)
    # an infeasible start is ignored rather than trusted
    bad = np.full(m.num_vars, 0.5)
    assert solve_milp(m, start=bad).objective == pytest.approx(plain.objective, abs=1e-9)


def test_trace_format_and_determinism():
    rng = np.random.default_rng(7)
    m, _ = random_model(rng, 9)
    t1, t2 = io.StringIO(), io.StringIO()
    a = solve_milp(m, trace=t1)
    b = solve_milp(m, trace=t2)
    assert t1.getvalue() == t2.getvalue()
    assert np.array_equal(a.values, b.values)
    pattern = re.compile(r"^node \d+ depth \d+ bound \S+ (branch v\d+=\S+|pruned|infeasible|integral)$")
    lines = t1.getvalue().splitlines()
    assert lines and all(pattern.match(line) for line in lines)


def test_node_and_time_limits():
    rng = np.random.default_rng(11)
    m, _ = random_model(rng, 10, with_indicators=False)
    out = solve_milp(m, SolverConfig(node_limit=1))
    assert out.status in (MilpStatus.NODE_LIMIT, MilpStatus.OPTIMAL, MilpStatus.INFEASIBLE)
    out = solve_milp(m, SolverConfig(time_limit=1e-9))
    assert out.status in (MilpStatus.TIMED_OUT, MilpStatus.OPTIMAL, MilpStatus.INFEASIBLE)
    if out.has_solution:
        assert m.max_violation(out.values) <= 1e-6


def test_timed_out_incumbent_is_feasible():
    # knapsack-like model that needs branching; stop after two nodes
    rng = np.random.default_rng(2)
    m = MilpModel()
    bins = [m.add_var(**BIN) for _ in range(12)]
    w = rng.uniform(1, 3, 12)
    m.add_constraint(le(LinearExpr(zip(w, bins)), 7.3))
    m.add_objective(Objective(ObjSense.MAXIMIZE, LinearExpr(zip(rng.uniform(1, 3, 12), bins))))
    m.freeze()
    out = solve_milp(m, SolverConfig(node_limit=3))
    if out.has_solution:
        assert m.max_violation(out.values) <= 1e-7
    full = solve_milp(m)
    assert full.status is MilpStatus.OPTIMAL
    if out.has_solution:
        assert out.objective <= full.objective + 1e-9


def test_unlowerable_indicator_uses_branching():
    # the implied constraint mentions an unbounded variable: no finite big-M exists
    m = MilpModel()
    x = m.add_var(lower=0.0)
    g = m.add_var(**BIN)
    m.add_indicator(Indicator(g, 1, le(X(x), 2.0)))
    m.add_indicator(Indicator(g, 0, le(X(x), 1.0)))
    m.add_objective(Objective(ObjSense.MAXIMIZE, X(x) - X(g) * 0.5))
    out = solve_milp(m.freeze())
    assert out.status is MilpStatus.OPTIMAL
    assert out.objective == pytest.approx(1.5)


# -- lexicographic -----------------------------------------------------------------------


def test_lexicographic_independent_optima():
    m = MilpModel()
    x = m.add_var(lower=0, upper=2)
    y = m.add_var(lower=0, upper=2)
    m.add_constraint(le(X(x) + X(y), 2.0))
    m.set_objectives([Objective(ObjSense.MAXIMIZE, X(y)), Objective(ObjSense.MINIMIZE, X(x))])
    out = lexicographic_solve(m.freeze())
    assert out.status is MilpStatus.OPTIMAL
    assert out.values[y] == pytest.approx(2.0) and out.values[x] == pytest.approx(0.0)
    assert out.objectives == pytest.approx([2.0, 0.0])
    assert len(out.stats.levels) == 2


def test_lexicographic_single_level_equals_solve_milp():
    rng = np.random.default_rng(21)
    m, _ = random_model(rng, 6)
    a = lexicographic_solve(m)
    b = solve_milp(m)
    assert a.status is b.status
    if b.has_solution:
        assert a.objectives == pytest.approx([b.objective])


@pytest.mark.parametrize("seed", range(8))
def test_lexicographic_first_level_matches_single_solve(seed):
    rng = np.random.default_rng(100 + seed)
    m, bins = random_model(rng, 6)
    m = m.copy()
    second = Objective(ObjSense.MINIMIZE, LinearExpr([(rng.uniform(-1, 1), v) for v in range(m.num_vars)]))
    first = m.objectives[0]
    m.set_objectives([first, second])
    m.freeze()
    out = lexicographic_solve(m)
    one = m.copy()
    one.set_objectives([first])
    ref = solve_milp(one.freeze())
    assert out.status is ref.status
    if ref.has_solution:
        # later levels may trade the first objective within the pinning tolerance
        lex_tol = SolverConfig().lex_tol
        assert abs(out.objectives[0] - ref.objective) <= lex_tol + 1e-9


def test_lexicographic_infeasible_propagates():
    m = MilpModel()
    b = m.add_var(**BIN)
    m.add_constraint(eq(X(b), 0.5))
    m.set_objectives([Objective(ObjSense.MAXIMIZE, X(b)), Objective(ObjSense.MINIMIZE, X(b))])
    out = lexicographic_solve(m.freeze())
    assert out.status is MilpStatus.INFEASIBLE
    assert len(out.stats.levels) == 1
