import itertools

import numpy as np
import pytest
from scipy.optimize import linprog

from relu_fdia.lp import EQ, GE, LE, LpIterationLimit, LpProblem, LpStatus, solve_lp
from relu_fdia.milp import LinearExpr, MilpModel, ModelError, Objective, ObjSense, VarSpec, le

INF = np.inf


def lp(c, A, senses, b, lb=None, ub=None, maximize=False):
    n = len(c)
    lb = np.zeros(n) if lb is None else lb
    ub = np.full(n, INF) if ub is None else ub
    return LpProblem(c, A, senses, b, lb, ub, maximize)


def test_single_bound_max():
    out = solve_lp(lp([1.0], [[1.0]], [LE], [3.0], maximize=True))
    assert out.status is LpStatus.OPTIMAL
    assert out.values.tolist() == [3.0] and out.objective == 3.0


def test_contradictory_bounds_infeasible():
    out = solve_lp(lp([0.0], [[1.0], [1.0]], [GE, LE], [1.0, 0.0], lb=[-INF]))
    assert out.status is LpStatus.INFEASIBLE
    assert out.values is None


def test_unbounded_with_ray():
    out = solve_lp(lp([1.0, 1.0], [[1.0, -1.0]], [LE], [1.0], maximize=True))
    assert out.status is LpStatus.UNBOUNDED
    assert out.ray is not None and out.ray.sum() > 0


def vertex_oracle(c, A, b):
    """max c x over {A x <= b, x >= 0} by enumerating every intersection of n tight rows."""
    n = len(c)
    rows = np.vstack([A, -np.eye(n)])
    rhs = np.concatenate([b, np.zeros(n)])
    best = -INF
    for idx in itertools.combinations(range(len(rows)), n):
        M = rows[list(idx)]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        v = np.linalg.solve(M, rhs[list(idx)])
        if np.all(rows @ v <= rhs + 1e-9):
            best = max(best, float(c @ v))
    return best


def test_two_variable_vertex_example():
    c, A, b = np.array([1.0, 1.0]), np.array([[1.0, 2.0], [3.0, 1.0]]), np.array([4.0, 6.0])
    out = solve_lp(lp(c, A, [LE, LE], b, maximize=True))
    assert out.optimal
    assert out.objective == pytest.approx(vertex_oracle(c, A, b), abs=1e-9)
    assert out.objective == pytest.approx(2.8)


@pytest.mark.parametrize("seed", range(30))
def test_random_bounded_lps_match_vertex_enumeration(seed):
    rng = np.random.default_rng(seed)
    n, m = int(rng.integers(2, 4)), int(rng.integers(2, 6))
    A = rng.uniform(0.1, 2.0, (m, n)) * rng.choice([1, 1, 1, -1], (m, n))
    A = np.vstack([A, np.ones((1, n))])  # keeps the region bounded
    b = np.concatenate([rng.uniform(0.5, 3.0, m), [5.0]])
    c = rng.uniform(-1, 1, n)
    out = solve_lp(lp(c, A, [LE] * (m + 1), b, maximize=True))
    assert out.optimal
    assert out.objective == pytest.approx(vertex_oracle(c, A, b), abs=1e-7)
    assert out.values @ c == pytest.approx(out.objective)


def random_general_lp(rng):
    n, m = int(rng.integers(2, 12)), int(rng.integers(1, 10))
    x0 = rng.uniform(-2, 2, n)
    A = rng.uniform(-1, 1, (m, n))
    A[rng.random((m, n)) < 0.3] = 0.0
    senses = rng.integers(0, 3, m)
    lhs = A @ x0
    slack = rng.uniform(0, 1, m)
    b = np.where(senses == LE, lhs + slack, np.where(senses == GE, lhs - slack, lhs))
    lb = np.where(rng.random(n) < 0.2, -INF, x0 - rng.uniform(0, 2, n))
    ub = np.where(rng.random(n) < 0.2, INF, x0 + rng.uniform(0, 2, n))
    c = rng.uniform(-1, 1, n)
    return LpProblem(c, A, senses, b, lb, ub, bool(rng.integers(0, 2))), x0


def scipy_solve(p):
    A_ub = np.vstack([p.A[p.senses == LE], -p.A[p.senses == GE]])
    b_ub = np.concatenate([p.b[p.senses == LE], -p.b[p.senses == GE]])
    res = linprog(
        -p.c if p.maximize else p.c,
        A_ub=A_ub if len(A_ub) else None,
        b_ub=b_ub if len(b_ub) else None,
        A_eq=p.A[p.senses == EQ] if np.any(p.senses == EQ) else None,
        b_eq=p.b[p.senses == EQ] if np.any(p.senses == EQ) else None,
        bounds=list(zip(np.where(np.isfinite(p.lb), p.lb, None), np.where(np.isfinite(p.ub), p.ub, None))),
        method="highs",
    )
    return res


@pytest.mark.parametrize("seed", range(150))
def test_random_lps_agree_with_scipy(seed):
    rng = np.random.default_rng(1000 + seed)
    p, x0 = random_general_lp(rng)
    out = solve_lp(p)
    ref = scipy_solve(p)
    if ref.status == 3:
        assert out.status is LpStatus.UNBOUNDED
        return
    assert ref.status == 0
    assert out.status is LpStatus.OPTIMAL
    want = -ref.fun if p.maximize else ref.fun
    assert out.objective == pytest.approx(want, abs=1e-6 * max(1.0, abs(want)))
    assert p.max_violation(out.values) <= 1e-7
    # weak duality spot check against the known feasible point
    if p.maximize:
        assert out.objective >= p.objective_value(x0) - 1e-7
    else:
        assert out.objective <= p.objective_value(x0) + 1e-7


@pytest.mark.parametrize("seed", range(5))
def test_reported_optimum_beats_sampled_feasible_points(seed):
    rng = np.random.default_rng(seed)
    n, m = 3, 4
    A = rng.uniform(0.1, 1.0, (m, n))
    b = rng.uniform(1.0, 2.0, m)
    c = rng.uniform(-1, 1, n)
    p = lp(c, A, [LE] * m, b, ub=np.full(n, 3.0), maximize=True)
    out = solve_lp(p)
    xs = rng.uniform(0, 3, (20000, n))
    feas = xs[np.all(xs @ A.T <= b, axis=1)][:1000]
    assert len(feas) > 100
    assert np.all(feas @ c <= out.objective + 1e-9)


@pytest.mark.parametrize("seed", range(40))
def test_warm_start_after_bound_change(seed):
    rng = np.random.default_rng(5000 + seed)
    p, x0 = random_general_lp(rng)
    first = solve_lp(p)
    if not first.optimal or first.basis is None:
        return
    lb, ub = p.lb.copy(), p.ub.copy()
    j = int(rng.integers(0, p.num_vars))
    mid = first.values[j]
    if rng.random() < 0.5:
        ub[j] = mid - rng.uniform(0, 1)
        lb[j] = min(lb[j], ub[j])
    else:
        lb[j] = mid + rng.uniform(0, 1)
        ub[j] = max(ub[j], lb[j])
    child = LpProblem(p.c, p.A, p.senses, p.b, lb, ub, p.maximize)
    warm = solve_lp(child, warm=first.basis)
    cold = solve_lp(child)
    assert warm.status is cold.status
    if cold.optimal:
        assert warm.objective == pytest.approx(cold.objective, abs=1e-6 * max(1.0, abs(cold.objective)))
        assert child.max_violation(warm.values) <= 1e-7


def test_deterministic():
    rng = np.random.default_rng(3)
    p, _ = random_general_lp(rng)
    a, b = solve_lp(p), solve_lp(p)
    assert a.status is b.status
    if a.optimal:
        assert np.array_equal(a.values, b.values)
        assert a.objective == b.objective


def test_degenerate_problem_terminates():
    # many redundant constraints through the same vertex
    n = 4
    rows = [np.eye(n)[i] for i in range(n)]
    rows += [np.ones(n) * k for k in range(1, 8)]
    A = np.array(rows)
    b = np.concatenate([np.ones(n), [n * k for k in range(1, 8)]])
    out = solve_lp(lp(np.ones(n), A, [LE] * len(b), b, maximize=True), bland_after=2)
    assert out.optimal and out.objective == pytest.approx(n)


def test_iteration_limit_is_distinct():
    rng = np.random.default_rng(9)
    A = rng.uniform(0.1, 1, (30, 30))
    with pytest.raises(LpIterationLimit):
        solve_lp(lp(np.ones(30), A, [LE] * 30, np.ones(30), maximize=True), max_iter=1)


def test_from_model():
    m = MilpModel()
    x = m.add_var(VarSpec(lower=0, upper=10))
    y = m.add_var(VarSpec(lower=0, upper=10))
    m.add_constraint(le(LinearExpr([(1, x), (2, y)]), 4.0))
    m.add_objective(Objective(ObjSense.MAXIMIZE, LinearExpr([(1, x), (1, y)], 1.0)))
    out = solve_lp(LpProblem.from_model(m))
    assert out.objective == pytest.approx(5.0)
    assert out.values[x] == pytest.approx(4.0)


def test_from_model_rejects_indicators():
    from relu_fdia.milp import Indicator, VarKind

    m = MilpModel()
    x = m.add_var()
    g = m.add_var(VarSpec(VarKind.BINARY, 0, 1))
    m.add_indicator(Indicator(g, 1, le(LinearExpr.var(x), 0.0)))
    with pytest.raises(ModelError):
        LpProblem.from_model(m)


def test_problem_validation():
    with pytest.raises(ValueError):
        LpProblem([1.0], [[1.0]], [LE], [1.0, 2.0], [0.0], [1.0])
    with pytest.raises(ValueError):
        LpProblem([1.0], [[1.0]], [LE], [1.0], [2.0], [1.0])
    with pytest.raises(ValueError):
        LpProblem([1.0], [[np.nan]], [LE], [1.0], [0.0], [1.0])
