"""Attack synthesis, independent verification and scenario campaigns."""

from __future__ import annotations

import csv
import enum
import io
import itertools
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .bb import MilpStatus, SolverConfig, lexicographic_solve, solve_milp
from .encoder import (
    AttackConstraint,
    EncodingError,
    Hierarchical,
    MinPerturbation,
    ObjectiveKind,
    PerturbationSpec,
    add_attack_constraint,
    constraint_from_dict,
    constraint_to_dict,
    encode,
    set_objective,
)
from .network import Network, forward

VERIFY_TOL = 1e-6
MAX_GRID_POINTS = 10_000_000
CSV_COLUMNS = ["k", "scenario_id", "indices", "status", "timed_out", "verified", "objective", "delta", "nodes"]


class ConfigError(ValueError):
    """Attack configuration that cannot be used as given."""


class VerificationError(RuntimeError):
    """A solver solution failed the forward-pass check: the encoding is wrong."""


# -- scenarios -------------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    indices: tuple[int, ...]
    id: int = 0

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if not idx:
            raise ConfigError("a scenario perturbs at least one input")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ConfigError(f"scenario indices must be strictly increasing, got {idx}")
        object.__setattr__(self, "indices", idx)

    @property
    def k(self) -> int:
        return len(self.indices)


def enumerate_scenarios(n_inputs: int, k: int) -> list[Scenario]:
    """All ``C(n_inputs, k)`` index sets in lexicographic order, ids counting from 0."""
    if not 1 <= k <= n_inputs:
        raise ConfigError(f"k must lie in [1, {n_inputs}], got {k}")
    return [Scenario(c, i) for i, c in enumerate(itertools.combinations(range(n_inputs), k))]


# -- configuration -----------------------------------------------------------------


def objective_to_dict(obj: ObjectiveKind) -> dict:
    if isinstance(obj, Hierarchical):
        return {"type": "hierarchical", "index": obj.index, "maximize": obj.maximize}
    return {"type": "min_perturbation"}


def objective_from_dict(d) -> ObjectiveKind:
    if d is None:
        return MinPerturbation()
    if isinstance(d, str):
        d = {"type": d}
    kind = d.get("type")
    if kind == "min_perturbation":
        return MinPerturbation()
    if kind == "hierarchical":
        if d.get("index") is None:
            raise ConfigError("hierarchical objective needs an output 'index'")
        return Hierarchical(int(d["index"]), bool(d.get("maximize", True)))
    raise ConfigError(f"unknown objective type {kind!r}")


def _vector(value, n, name):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.shape != (n,):
        raise ConfigError(f"{name} has {arr.size} entries, expected 1 or {n}")
    return arr.copy()


@dataclass
class AttackConfig:
    """Everything about one attack except the scenario (which inputs move).

    ``allowed`` restricts which inputs scenarios may use (``None`` means all).
    With ``nonnegative_inputs`` the lower delta bound of input ``i`` becomes
    ``max(delta_lo_i, -x_i)`` so perturbed readings stay physical.
    """

    base_input: np.ndarray
    constraint: AttackConstraint
    objective: ObjectiveKind = field(default_factory=MinPerturbation)
    delta_lo: np.ndarray | float = -5.0
    delta_hi: np.ndarray | float = 5.0
    weights: np.ndarray | float | None = None
    allowed: tuple[int, ...] | None = None
    nonnegative_inputs: bool = False
    bounds: str = "lp"
    solver: dict = field(default_factory=dict)

    def __post_init__(self):
        self.base_input = np.asarray(self.base_input, dtype=float).reshape(-1)
        n = len(self.base_input)
        if n == 0 or not np.all(np.isfinite(self.base_input)):
            raise ConfigError("base_input must be a non-empty finite vector")
        self.delta_lo = _vector(self.delta_lo, n, "delta_lo")
        self.delta_hi = _vector(self.delta_hi, n, "delta_hi")
        self.weights = _vector(1.0 if self.weights is None else self.weights, n, "weights")
        if self.allowed is not None:
            self.allowed = tuple(sorted({int(i) for i in self.allowed}))
            if any(not 0 <= i < n for i in self.allowed):
                raise ConfigError(f"allowed indices must lie in [0, {n})")
        if np.any(self.delta_lo > 0) or np.any(self.delta_hi < 0):
            raise ConfigError("delta bounds must bracket 0")
        if np.any(self.weights < 0):
            raise ConfigError("weights must be non-negative")
        if self.bounds not in ("lp", "linear", "interval"):
            raise ConfigError(f"unknown bound method {self.bounds!r}")
        try:
            SolverConfig(**self.solver)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad solver overrides: {exc}")

    @property
    def input_dim(self) -> int:
        return len(self.base_input)

    @property
    def candidate_inputs(self) -> tuple[int, ...]:
        return tuple(range(self.input_dim)) if self.allowed is None else self.allowed

    def effective_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = self.delta_lo.copy()
        if self.nonnegative_inputs:
            lo = np.minimum(np.maximum(lo, -self.base_input), 0.0)
        return lo, self.delta_hi.copy()

    def perturbation(self, scenario: Scenario) -> PerturbationSpec:
        bad = [i for i in scenario.indices if i not in self.candidate_inputs]
        if bad:
            raise ConfigError(f"scenario perturbs inputs {bad} outside the allowed set")
        lo, hi = self.effective_bounds()
        return PerturbationSpec(self.base_input, scenario.indices, lo, hi, self.weights)

    def solver_config(self, base: SolverConfig | None = None) -> SolverConfig:
        return (base or SolverConfig()).replace(**self.solver)

    def with_eps(self, eps: float) -> "AttackConfig":
        if not hasattr(self.constraint, "eps"):
            return self
        return replace(self, constraint=replace(self.constraint, eps=float(eps)))

    def to_dict(self) -> dict:
        return {
            "base_input": self.base_input.tolist(),
            "allowed": "all" if self.allowed is None else list(self.allowed),
            "delta_lo": self.delta_lo.tolist(),
            "delta_hi": self.delta_hi.tolist(),
            "weights": self.weights.tolist(),
            "nonnegative_inputs": self.nonnegative_inputs,
            "constraint": constraint_to_dict(self.constraint),
            "objective": objective_to_dict(self.objective),
            "bounds": self.bounds,
            "solver": dict(self.solver),
        }

    @classmethod
    def from_dict(cls, d: dict, seed: int | None = None, input_dim: int | None = None) -> "AttackConfig":
        """Parse a config object.

        A missing ``base_input`` is drawn uniformly from [-1, 1] with ``seed``; that
        needs ``input_dim``.
        """
        if not isinstance(d, dict):
            raise ConfigError("attack config must be a JSON object")
        known = {
            "base_input", "allowed", "delta_lo", "delta_hi", "weights", "nonnegative_inputs",
            "constraint", "objective", "eps", "bounds", "solver",
        }
        extra = sorted(set(d) - known)
        if extra:
            raise ConfigError(f"unknown attack config keys {extra}")
        if "constraint" not in d:
            raise ConfigError("attack config needs a 'constraint'")
        base = d.get("base_input")
        if base is None:
            if input_dim is None:
                raise ConfigError("no base_input given and the input dimension is unknown")
            base = np.random.default_rng(seed).uniform(-1.0, 1.0, input_dim)
        allowed = d.get("allowed", "all")
        if allowed == "all":
            allowed = None
        elif not isinstance(allowed, list):
            raise ConfigError("'allowed' must be \"all\" or a list of input indices")
        try:
            constraint = constraint_from_dict(d["constraint"])
        except EncodingError as exc:
            raise ConfigError(str(exc))
        try:
            cfg = cls(
                base_input=base,
                constraint=constraint,
                objective=objective_from_dict(d.get("objective")),
                delta_lo=d.get("delta_lo", -5.0),
                delta_hi=d.get("delta_hi", 5.0),
                weights=d.get("weights"),
                allowed=allowed,
                nonnegative_inputs=bool(d.get("nonnegative_inputs", False)),
                bounds=d.get("bounds", "lp"),
                solver=dict(d.get("solver", {})),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc))
        if d.get("eps") is not None:
            cfg = cfg.with_eps(d["eps"])
        return cfg


def load_attack_config(text: str, seed: int | None = None, input_dim: int | None = None) -> AttackConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"cannot parse attack config JSON: {exc}")
    return AttackConfig.from_dict(data, seed=seed, input_dim=input_dim)


# -- results ---------------------------------------------------------------------------


class AttackStatus(str, enum.Enum):
    SUCCESS = "success"
    NO_ATTACK = "no_attack"
    TIMED_OUT = "timed_out"
    ERROR = "error"


@dataclass
class AttackResult:
    scenario: Scenario
    status: AttackStatus
    delta: np.ndarray | None = None
    outputs: np.ndarray | None = None
    objectives: list[float] | None = None
    wall_time: float = 0.0
    verified: bool = False
    # Success found before the time limit ran out without an optimality proof
    timed_out: bool = False
    nodes: int = 0
    message: str = ""

    @property
    def objective(self) -> float | None:
        return None if not self.objectives else self.objectives[-1]

    def to_dict(self) -> dict:
        def arr(a):
            return None if a is None else [float(v) for v in a]

        return {
            "scenario": {"id": self.scenario.id, "indices": list(self.scenario.indices)},
            "status": self.status.value,
            "delta": arr(self.delta),
            "outputs": arr(self.outputs),
            "objectives": arr(self.objectives),
            "wall_time": self.wall_time,
            "verified": self.verified,
            "timed_out": self.timed_out,
            "nodes": self.nodes,
            "message": self.message,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AttackResult":
        try:
            sc = d["scenario"]

            def arr(a):
                return None if a is None else np.asarray(a, dtype=float)

            return cls(
                scenario=Scenario(tuple(sc["indices"]), int(sc.get("id", 0))),
                status=AttackStatus(d["status"]),
                delta=arr(d.get("delta")),
                outputs=arr(d.get("outputs")),
                objectives=None if d.get("objectives") is None else [float(v) for v in d["objectives"]],
                wall_time=float(d.get("wall_time", 0.0)),
                verified=bool(d.get("verified", False)),
                timed_out=bool(d.get("timed_out", False)),
                nodes=int(d.get("nodes", 0)),
                message=str(d.get("message", "")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed attack result: {exc}")


@dataclass(frozen=True)
class Verdict:
    ok: bool
    reason: str = "ok"
    detail: str = ""

    def __bool__(self):
        return self.ok


def verify(net: Network, result: AttackResult, config: AttackConfig) -> Verdict:
    """Re-evaluate the perturbed input on the real network and check the attack goal.

    Orderings with a strict margin are checked at half the margin; everything else
    within ``VERIFY_TOL``.
    """
    if result.delta is None:
        return Verdict(False, "no-delta")
    delta = np.asarray(result.delta, dtype=float)
    if len(delta) != net.input_dim or config.input_dim != net.input_dim:
        return Verdict(False, "dimension-mismatch", f"delta {len(delta)}, network {net.input_dim}")
    if not np.all(np.isfinite(delta)):
        return Verdict(False, "non-finite")
    outside = [i for i in range(len(delta)) if i not in result.scenario.indices and delta[i] != 0.0]
    if outside:
        return Verdict(False, "out-of-scenario", f"inputs {outside} perturbed")
    lo, hi = config.effective_bounds()
    sel = list(result.scenario.indices)
    if np.any(delta[sel] < lo[sel] - VERIFY_TOL) or np.any(delta[sel] > hi[sel] + VERIFY_TOL):
        return Verdict(False, "out-of-bounds")
    clean = forward(net, config.base_input)
    y = forward(net, config.base_input + delta)
    viol = float(config.constraint.violation(y, clean, eps_scale=0.5))
    if viol > VERIFY_TOL:
        return Verdict(False, "constraint-violated", f"violation {viol:.3g}")
    if result.outputs is not None:
        gap = float(np.max(np.abs(np.asarray(result.outputs) - y)))
        if gap > VERIFY_TOL:
            return Verdict(False, "output-mismatch", f"model outputs differ from forward by {gap:.3g}")
    return Verdict(True)


def synthesize(
    net: Network,
    config: AttackConfig,
    scenario: Scenario,
    solver: SolverConfig | None = None,
    trace=None,
) -> AttackResult:
    """Encode, solve and verify one scenario.

    ``solver`` replaces the config's own solver settings when given.
    Raises :class:`VerificationError` when the solver returns a solution the
    network does not confirm.
    """
    t0 = time.perf_counter()
    cfg = solver if solver is not None else config.solver_config()
    pert = config.perturbation(scenario)
    ea = encode(net, pert, bounds=config.bounds)
    add_attack_constraint(ea, config.constraint)
    set_objective(ea, config.objective)
    model = ea.model.freeze()
    remaining = cfg.time_limit - (time.perf_counter() - t0)
    if remaining <= 0:
        return AttackResult(scenario, AttackStatus.TIMED_OUT, wall_time=time.perf_counter() - t0)
    cfg = cfg.replace(time_limit=remaining)
    heuristic = ea.pattern_heuristic()
    if len(model.objectives) > 1:
        out = lexicographic_solve(model, cfg, heuristic=heuristic, trace=trace)
    else:
        out = solve_milp(model, cfg, heuristic=heuristic, trace=trace)
    result = AttackResult(scenario, AttackStatus.NO_ATTACK, nodes=out.stats.nodes)
    if out.status is MilpStatus.UNBOUNDED:
        raise VerificationError("relaxation unbounded although the perturbation box is finite")
    if out.has_solution:
        result.delta = ea.decode(out.values)
        result.outputs = np.array([out.values[v] for v in ea.output_vars])
        result.objectives = [float(v) for v in out.objectives]
        verdict = verify(net, result, config)
        if not verdict:
            raise VerificationError(
                f"scenario {scenario.indices}: solver solution fails verification "
                f"({verdict.reason}: {verdict.detail})"
            )
        result.verified = True
        result.status = AttackStatus.SUCCESS
        result.timed_out = out.status is not MilpStatus.OPTIMAL
    elif out.status is MilpStatus.INFEASIBLE:
        result.status = AttackStatus.NO_ATTACK
    else:
        result.status = AttackStatus.TIMED_OUT
    result.wall_time = time.perf_counter() - t0
    return result


# -- brute force oracle -------------------------------------------------------------


@dataclass
class BruteForceResult:
    delta: np.ndarray
    objective: float
    outputs: np.ndarray
    points: int


def _axis(lo, hi, step):
    k_lo = math.ceil(lo / step - 1e-9)
    k_hi = math.floor(hi / step + 1e-9)
    pts = {round(k * step, 12) for k in range(k_lo, k_hi + 1)}
    pts.update((float(lo), float(hi), 0.0))
    return np.array(sorted(p for p in pts if lo <= p <= hi))


def brute_force(
    net: Network, config: AttackConfig, scenario: Scenario, step: float, chunk: int = 200_000
) -> BruteForceResult | None:
    """Best feasible grid point of the perturbation box (grid anchored at 0, plus ends).

    Minimizes the weighted L1 cost, or for a hierarchical objective optimizes the
    designated output first and the cost second; remaining ties go to the
    lexicographically smallest delta.
    """
    if not step > 0:
        raise ConfigError("grid step must be positive")
    if scenario.k > 3:
        raise ConfigError("brute force handles at most 3 perturbed inputs")
    lo, hi = config.effective_bounds()
    axes = [_axis(lo[i], hi[i], step) for i in scenario.indices]
    total = math.prod(len(a) for a in axes)
    if total > MAX_GRID_POINTS:
        raise ConfigError(f"grid has {total} points, more than {MAX_GRID_POINTS}")
    clean = forward(net, config.base_input)
    sel = list(scenario.indices)
    obj = config.objective
    best = None
    best_key = None
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
    for start in range(0, total, chunk):
        part = grid[start : start + chunk]
        x = np.tile(config.base_input, (len(part), 1))
        x[:, sel] += part
        y = forward(net, x)
        ok = config.constraint.violation(y, clean) <= 0.0
        if not ok.any():
            continue
        cost = np.abs(part) @ config.weights[sel]
        if isinstance(obj, Hierarchical):
            primary = -y[:, obj.index] if obj.maximize else y[:, obj.index]
        else:
            primary = cost
        idx = np.flatnonzero(ok)
        # grid rows are already in lexicographic order, so a stable sort keeps ties ordered
        order = np.lexsort((cost[idx], primary[idx]))
        i = int(idx[order[0]])
        key = (float(primary[i]), float(cost[i]))
        if best_key is None or key < best_key:
            best_key = key
            delta = np.zeros(config.input_dim)
            delta[sel] = part[i]
            value = float(y[i, obj.index]) if isinstance(obj, Hierarchical) else float(cost[i])
            best = BruteForceResult(delta, value, y[i], total)
    return best


# -- campaigns ---------------------------------------------------------------------------


@dataclass
class CampaignReport:
    results: list[AttackResult]
    config: dict
    ks: list[int]

    @property
    def total(self) -> int:
        return len(self.results)

    def count(self, status: AttackStatus) -> int:
        return sum(1 for r in self.results if r.status is status)

    @property
    def successful(self) -> int:
        return self.count(AttackStatus.SUCCESS)

    @property
    def failed(self) -> int:
        return self.count(AttackStatus.NO_ATTACK) + self.count(AttackStatus.ERROR)

    @property
    def timed_out(self) -> int:
        return self.count(AttackStatus.TIMED_OUT)

    @property
    def peak_time(self) -> float:
        return max((r.wall_time for r in self.results), default=0.0)

    @property
    def mean_time(self) -> float:
        return sum(r.wall_time for r in self.results) / self.total if self.results else 0.0

    def summary(self) -> dict:
        per_k = {}
        for k in self.ks:
            rs = [r for r in self.results if r.scenario.k == k]
            per_k[str(k)] = {
                "successful": sum(r.status is AttackStatus.SUCCESS for r in rs),
                "total": len(rs),
                "peak_time": max((r.wall_time for r in rs), default=0.0),
            }
        return {
            "total": self.total,
            "successful": self.successful,
            "no_attack": self.count(AttackStatus.NO_ATTACK),
            "timed_out": self.timed_out,
            "errors": self.count(AttackStatus.ERROR),
            "success_with_timeout": sum(r.timed_out for r in self.results),
            "peak_time": self.peak_time,
            "mean_time": self.mean_time,
            "per_k": per_k,
            "config": self.config,
            "timings": [
                {"k": r.scenario.k, "scenario_id": r.scenario.id, "wall_time": r.wall_time}
                for r in self.results
            ],
        }

    def to_csv(self) -> str:
        """One row per scenario in ``CSV_COLUMNS`` order; wall times live in the summary."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.results:
            delta = ""
            if r.delta is not None:
                delta = " ".join(f"{r.delta[i]:.10g}" for i in r.scenario.indices)
            w.writerow(
                [
                    r.scenario.k,
                    r.scenario.id,
                    " ".join(str(i) for i in r.scenario.indices),
                    r.status.value,
                    int(r.timed_out),
                    int(r.verified),
                    "" if r.objective is None else f"{r.objective:.10g}",
                    delta,
                    r.nodes,
                ]
            )
        return buf.getvalue()


def _run_one(args) -> AttackResult:
    net, config, scenario, solver = args
    t0 = time.perf_counter()
    try:
        return synthesize(net, config, scenario, solver)
    except (VerificationError, EncodingError, ConfigError, ValueError) as exc:
        return AttackResult(
            scenario, AttackStatus.ERROR, wall_time=time.perf_counter() - t0, message=f"{type(exc).__name__}: {exc}"
        )


def run_campaign(
    net: Network,
    config: AttackConfig,
    ks: Sequence[int],
    solver: SolverConfig | None = None,
    jobs: int = 1,
    progress=None,
) -> CampaignReport:
    """Synthesize every scenario of every ``k``; results come back ordered by (k, id)."""
    ks = [int(k) for k in ks]
    candidates = config.candidate_inputs
    tasks = []
    for k in ks:
        if not 1 <= k <= len(candidates):
            raise ConfigError(f"k must lie in [1, {len(candidates)}], got {k}")
        for sc in enumerate_scenarios(len(candidates), k):
            # map positions among the candidate inputs back to input indices
            tasks.append((net, config, Scenario(tuple(candidates[i] for i in sc.indices), sc.id), solver))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = []
            for r in pool.map(_run_one, tasks, chunksize=max(1, len(tasks) // (8 * jobs))):
                results.append(r)
                if progress:
                    progress(r)
    else:
        results = []
        for t in tasks:
            r = _run_one(t)
            results.append(r)
            if progress:
                progress(r)
    results.sort(key=lambda r: (r.scenario.k, r.scenario.id))
    return CampaignReport(results, config.to_dict(), ks)
