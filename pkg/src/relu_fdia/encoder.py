"""Encode a ReLU network plus an input-perturbation attack as a MILP.

Each ReLU neuron with pre-activation ``z`` gets continuous ``x, s >= 0`` and a binary
``ac`` with ``z = x - s``, ``ac = 1 -> x <= 0`` and ``ac = 0 -> s <= 0``.  Perturbable
inputs are ``base_i + d_plus_i - d_minus_i`` with both parts non-negative.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .lp import LE, LpProblem, solve_lp
from .milp import (
    Constraint,
    Indicator,
    LinearExpr,
    MilpModel,
    Objective,
    ObjSense,
    VarKind,
    VarSpec,
    eq,
    ge,
    le,
)
from .network import Activation, IntervalBox, Network, forward, forward_trace, interval_bounds, linear_bounds

DEFAULT_EPS = 1e-4
# outward slack on LP-derived bounds, well above the simplex tolerance
_LP_BOUND_PAD = 1e-6


class EncodingError(ValueError):
    pass


@dataclass(frozen=True)
class PerturbationSpec:
    """Which inputs may move and by how much.

    ``delta_lo``/``delta_hi``/``weights`` are full input-length vectors; entries of
    inputs outside ``allowed`` are ignored.
    """

    base_input: np.ndarray
    allowed: tuple[int, ...]
    delta_lo: np.ndarray
    delta_hi: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        base = np.array(self.base_input, dtype=float).reshape(-1)
        n = len(base)
        lo = np.broadcast_to(np.array(self.delta_lo, dtype=float), (n,)).copy()
        hi = np.broadcast_to(np.array(self.delta_hi, dtype=float), (n,)).copy()
        w = np.ones(n) if self.weights is None else np.broadcast_to(np.array(self.weights, dtype=float), (n,)).copy()
        allowed = tuple(sorted({int(i) for i in self.allowed}))
        for i in allowed:
            if not 0 <= i < n:
                raise EncodingError(f"perturbed input index {i} out of range [0, {n})")
        sel = list(allowed)
        if not (np.all(np.isfinite(lo[sel])) and np.all(np.isfinite(hi[sel]))):
            raise EncodingError("delta bounds must be finite")
        if np.any(lo[sel] > 0) or np.any(hi[sel] < 0):
            raise EncodingError("delta bounds must bracket 0")
        if np.any(w[sel] < 0) or not np.all(np.isfinite(w[sel])):
            raise EncodingError("perturbation weights must be finite and non-negative")
        object.__setattr__(self, "base_input", base)
        object.__setattr__(self, "allowed", allowed)
        object.__setattr__(self, "delta_lo", lo)
        object.__setattr__(self, "delta_hi", hi)
        object.__setattr__(self, "weights", w)

    @property
    def input_dim(self) -> int:
        return len(self.base_input)

    def box(self) -> IntervalBox:
        """Reachable input box (non-perturbable inputs are pinned)."""
        lo = self.base_input.copy()
        hi = self.base_input.copy()
        sel = list(self.allowed)
        lo[sel] += self.delta_lo[sel]
        hi[sel] += self.delta_hi[sel]
        return IntervalBox(lo, hi)

    def cost(self, delta) -> float:
        return float(np.sum(self.weights * np.abs(np.asarray(delta, dtype=float))))


# -- attack constraints -------------------------------------------------------


def _check_eps(eps):
    if not eps > 0:
        raise EncodingError(f"ordering margin eps must be positive, got {eps}")


@dataclass(frozen=True)
class OutputRange:
    """``lo <= y[index] <= hi``."""

    index: int
    lo: float
    hi: float

    def __post_init__(self):
        if self.lo > self.hi:
            raise EncodingError(f"output range [{self.lo}, {self.hi}] is empty")

    def indices(self):
        return [self.index]

    def rows(self, out: list[LinearExpr], clean: np.ndarray) -> list[Constraint]:
        y = out[self.index]
        return [ge(y, self.lo), le(y, self.hi)]

    def violation(self, y, clean, eps_scale=1.0):
        v = np.asarray(y)[..., self.index]
        return np.maximum(0.0, np.maximum(self.lo - v, v - self.hi))


@dataclass(frozen=True)
class MinScore:
    """``y[target]`` is below every other output by at least ``eps``."""

    target: int
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        _check_eps(self.eps)

    def indices(self):
        return [self.target]

    def rows(self, out, clean):
        return [le(out[self.target] - out[j], -self.eps) for j in range(len(out)) if j != self.target]

    def violation(self, y, clean, eps_scale=1.0):
        y = np.asarray(y)
        others = np.delete(y, self.target, axis=-1)
        if others.shape[-1] == 0:
            return np.zeros(y.shape[:-1])
        return np.maximum(0.0, y[..., self.target] - (others.min(axis=-1) - self.eps * eps_scale))


@dataclass(frozen=True)
class PartialOrdering:
    """``y[first] < y[second] <`` every other output, each by ``eps``."""

    first: int
    second: int
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        _check_eps(self.eps)
        if self.first == self.second:
            raise EncodingError("partial ordering needs two distinct outputs")

    def indices(self):
        return [self.first, self.second]

    def rows(self, out, clean):
        a, b = self.first, self.second
        rows = [le(out[a] - out[b], -self.eps)]
        rows += [le(out[b] - out[j], -self.eps) for j in range(len(out)) if j not in (a, b)]
        return rows

    def violation(self, y, clean, eps_scale=1.0):
        y = np.asarray(y)
        e = self.eps * eps_scale
        worst = np.maximum(0.0, y[..., self.first] - (y[..., self.second] - e))
        for j in range(y.shape[-1]):
            if j not in (self.first, self.second):
                worst = np.maximum(worst, y[..., self.second] - (y[..., j] - e))
        return worst


@dataclass(frozen=True)
class TotalOrdering:
    """``y[perm[0]] < y[perm[1]] < ...`` with margin ``eps``."""

    permutation: tuple[int, ...]
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        _check_eps(self.eps)
        perm = tuple(int(i) for i in self.permutation)
        if sorted(perm) != list(range(len(perm))):
            raise EncodingError(f"{perm} is not a permutation of 0..{len(perm) - 1}")
        object.__setattr__(self, "permutation", perm)

    def indices(self):
        return list(self.permutation)

    def rows(self, out, clean):
        if len(self.permutation) != len(out):
            raise EncodingError(
                f"total ordering over {len(self.permutation)} outputs but network has {len(out)}"
            )
        p = self.permutation
        return [le(out[p[r]] - out[p[r + 1]], -self.eps) for r in range(len(p) - 1)]

    def violation(self, y, clean, eps_scale=1.0):
        y = np.asarray(y)
        p = self.permutation
        e = self.eps * eps_scale
        worst = np.zeros(y.shape[:-1])
        for r in range(len(p) - 1):
            worst = np.maximum(worst, y[..., p[r]] - (y[..., p[r + 1]] - e))
        return worst


@dataclass(frozen=True)
class MinOutputIncrease:
    """``y[index] >= clean[index] + threshold``."""

    index: int
    threshold: float

    def indices(self):
        return [self.index]

    def rows(self, out, clean):
        return [ge(out[self.index], float(clean[self.index]) + self.threshold)]

    def violation(self, y, clean, eps_scale=1.0):
        return np.maximum(0.0, clean[self.index] + self.threshold - np.asarray(y)[..., self.index])


AttackConstraint = Union[OutputRange, MinScore, PartialOrdering, TotalOrdering, MinOutputIncrease]

_CONSTRAINT_TYPES = {
    "output_range": OutputRange,
    "min_score": MinScore,
    "partial_ordering": PartialOrdering,
    "total_ordering": TotalOrdering,
    "min_output_increase": MinOutputIncrease,
}


def constraint_to_dict(c: AttackConstraint) -> dict:
    kind = next(k for k, t in _CONSTRAINT_TYPES.items() if isinstance(c, t))
    out = {"type": kind}
    out.update({k: (list(v) if isinstance(v, tuple) else v) for k, v in c.__dict__.items()})
    return out


def constraint_from_dict(d: dict) -> AttackConstraint:
    d = dict(d)
    kind = d.pop("type", None)
    if kind not in _CONSTRAINT_TYPES:
        raise EncodingError(f"unknown attack constraint type {kind!r}; expected one of {sorted(_CONSTRAINT_TYPES)}")
    if "permutation" in d:
        d["permutation"] = tuple(d["permutation"])
    try:
        return _CONSTRAINT_TYPES[kind](**d)
    except TypeError as exc:
        raise EncodingError(f"bad parameters for {kind}: {exc}")


# -- objectives -----------------------------------------------------------------


@dataclass(frozen=True)
class MinPerturbation:
    """Minimize the weighted L1 norm of the perturbation."""


@dataclass(frozen=True)
class Hierarchical:
    """Maximize (or minimize) one output first, then minimize the perturbation."""

    index: int | None = None
    maximize: bool = True


ObjectiveKind = Union[MinPerturbation, Hierarchical]


# -- encoded attack -------------------------------------------------------------


@dataclass
class EncodedAttack:
    net: Network
    pert: PerturbationSpec
    model: MilpModel
    neurons: list[tuple[int, int]]
    relu_vars: dict[tuple[int, int], tuple[int, int, int]]
    delta_vars: dict[int, tuple[int, int]]
    output_vars: list[int]
    layer_vars: list[list[int]]
    pre_bounds: list[tuple[np.ndarray, np.ndarray]]
    clean_output: np.ndarray
    attack_constraints: list = field(default_factory=list)

    @property
    def ac_vars(self) -> list[int]:
        return [self.relu_vars[n][2] for n in self.neurons]

    def output_exprs(self) -> list[LinearExpr]:
        return [LinearExpr.var(v) for v in self.output_vars]

    def perturbation_cost(self) -> LinearExpr:
        terms = []
        for i, (plus, minus) in self.delta_vars.items():
            w = self.pert.weights[i]
            if w:
                terms += [(w, plus), (w, minus)]
        return LinearExpr(terms)

    def decode(self, values) -> np.ndarray:
        """Perturbation vector (full input length) from model values."""
        delta = np.zeros(self.pert.input_dim)
        for i, (plus, minus) in self.delta_vars.items():
            delta[i] = values[plus] - values[minus]
        return delta

    def assignment(self, delta) -> np.ndarray:
        """Model values induced by perturbing with ``delta`` and evaluating the net."""
        delta = np.asarray(delta, dtype=float)
        values = np.zeros(self.model.num_vars)
        for i, (plus, minus) in self.delta_vars.items():
            values[plus] = max(delta[i], 0.0)
            values[minus] = max(-delta[i], 0.0)
        trace = forward_trace(self.net, self.pert.base_input + delta)
        for k, (z, a) in enumerate(trace):
            if self.net.layers[k].activation is Activation.RELU:
                for j in range(len(z)):
                    xv, sv, acv = self.relu_vars[(k, j)]
                    values[xv] = max(z[j], 0.0)
                    values[sv] = max(-z[j], 0.0)
                    values[acv] = 1.0 if z[j] < 0 else 0.0
            else:
                for j, v in enumerate(self.layer_vars[k]):
                    values[v] = z[j]
        return values

    def pattern_heuristic(self):
        """Branch-and-bound hook: evaluate the net at the relaxation's perturbation."""

        def propose(values):
            delta = self.decode(values)
            sel = list(self.delta_vars)
            delta[sel] = np.clip(delta[sel], self.pert.delta_lo[sel], self.pert.delta_hi[sel])
            return self.assignment(delta)

        return propose


def _pad(lo, hi):
    # float slack so that forward-pass values never fall outside the big-M box
    pad = 1e-9 * (1.0 + np.maximum(np.abs(lo), np.abs(hi)))
    return lo - pad, hi + pad


def lp_bounds(net: Network, box: IntervalBox) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pre-activation bounds tightened by LP over the triangle relaxation of earlier layers.

    Starts from :func:`linear_bounds`; for each layer, every neuron that still spans 0
    is minimized and maximized over the relaxation built from the bounds so far.
    Stable neurons are substituted away, so the LP only has columns for the free
    inputs and for the unstable neurons of earlier layers.
    """
    bounds = [(lo.copy(), hi.copy()) for lo, hi in linear_bounds(net, box)]
    free = np.flatnonzero(box.hi > box.lo)
    for target in range(1, len(net.layers)):
        lo_t, hi_t = bounds[target]
        todo = [j for j in range(len(lo_t)) if lo_t[j] < 0 < hi_t[j]]
        if not todo:
            continue
        n_unstable = sum(
            int(np.sum((bounds[k][0] < 0) & (bounds[k][1] > 0)))
            for k in range(target)
            if net.layers[k].activation is Activation.RELU
        )
        n_cols = len(free) + n_unstable
        col_lo = np.concatenate([box.lo[free], np.zeros(n_unstable)])
        col_hi = np.concatenate([box.hi[free], np.zeros(n_unstable)])
        # post-activations of the previous layer as P @ cols + p0
        P = np.zeros((net.input_dim, n_cols))
        P[free, np.arange(len(free))] = 1.0
        p0 = np.where(box.hi > box.lo, 0.0, box.lo)
        rows, rhs = [], []
        col = len(free)
        for k in range(target):
            layer = net.layers[k]
            Z, z0 = layer.weights @ P, layer.weights @ p0 + layer.biases
            if layer.activation is not Activation.RELU:
                P, p0 = Z, z0
                continue
            lo, hi = bounds[k]
            P, p0 = np.zeros_like(Z), np.zeros_like(z0)
            for j in range(layer.out_dim):
                l, h = lo[j], hi[j]
                if l >= 0:
                    P[j], p0[j] = Z[j], z0[j]
                elif h > 0:
                    slope = h / (h - l)
                    col_hi[col] = h
                    r = Z[j].copy()
                    r[col] = -1.0
                    rows.append(r)  # z <= a
                    rhs.append(-z0[j])
                    r = -slope * Z[j]
                    r[col] = 1.0
                    rows.append(r)  # a <= slope (z - l)
                    rhs.append(slope * (z0[j] - l))
                    P[j, col] = 1.0
                    col += 1
        layer = net.layers[target]
        Z, z0 = layer.weights @ P, layer.weights @ p0 + layer.biases
        if not rows:
            # a plain box: the bounds are attained at its corners
            for j in todo:
                lo_t[j] = max(lo_t[j], z0[j] + np.minimum(Z[j] * col_lo, Z[j] * col_hi).sum())
                hi_t[j] = min(hi_t[j], z0[j] + np.maximum(Z[j] * col_lo, Z[j] * col_hi).sum())
                hi_t[j] = max(hi_t[j], lo_t[j])
            continue
        base = LpProblem(np.zeros(n_cols), np.array(rows), [LE] * len(rows), rhs, col_lo, col_hi)
        warm = None
        for j in todo:
            for upper in (False, True):
                base.c = Z[j]
                base.maximize = upper
                out = solve_lp(base, warm=warm)
                if not out.optimal:
                    continue
                warm = out.basis
                val = out.objective + z0[j]
                if upper:
                    hi_t[j] = min(hi_t[j], val + _LP_BOUND_PAD * (1.0 + abs(val)))
                else:
                    lo_t[j] = max(lo_t[j], val - _LP_BOUND_PAD * (1.0 + abs(val)))
            hi_t[j] = max(hi_t[j], lo_t[j])
    return bounds


def encode(net: Network, pert: PerturbationSpec, bounds: str = "linear") -> EncodedAttack:
    """MILP of ``net(base + delta)`` over the perturbation box (no attack goal yet).

    ``bounds`` selects the pre-activation bound method used for big-M constants and
    variable bounds: ``"lp"`` (LP tightening, slowest and tightest), ``"linear"``
    (back-substituted envelopes) or ``"interval"``.
    """
    if pert.input_dim != net.input_dim:
        raise EncodingError(f"perturbation has {pert.input_dim} inputs, network expects {net.input_dim}")
    box = pert.box()
    if bounds == "lp":
        pre_bounds = lp_bounds(net, box)
    elif bounds == "linear":
        pre_bounds = linear_bounds(net, box)
    elif bounds == "interval":
        pre_bounds = interval_bounds(net, box)
    else:
        raise EncodingError(f"unknown bound method {bounds!r}")
    pre_bounds = [_pad(lo, hi) for lo, hi in pre_bounds]

    model = MilpModel()
    delta_vars: dict[int, tuple[int, int]] = {}
    inputs: list[LinearExpr] = []
    for i in range(net.input_dim):
        base = float(pert.base_input[i])
        if i in pert.allowed:
            plus = model.add_var(VarSpec(VarKind.CONTINUOUS, 0.0, float(pert.delta_hi[i]), f"dx+[{i}]"))
            minus = model.add_var(VarSpec(VarKind.CONTINUOUS, 0.0, float(-pert.delta_lo[i]), f"dx-[{i}]"))
            delta_vars[i] = (plus, minus)
            inputs.append(LinearExpr([(1.0, plus), (-1.0, minus)], base))
        else:
            inputs.append(LinearExpr((), base))

    neurons: list[tuple[int, int]] = []
    relu_vars: dict[tuple[int, int], tuple[int, int, int]] = {}
    layer_vars: list[list[int]] = []
    for k, layer in enumerate(net.layers):
        lo, hi = pre_bounds[k]
        outs = []
        for j in range(layer.out_dim):
            pre = LinearExpr((), float(layer.biases[j]))
            for w, inp in zip(layer.weights[j], inputs):
                if w:
                    pre = pre + inp * float(w)
            if layer.activation is Activation.RELU:
                tag = f"[{k + 1},{j}]"
                xv = model.add_var(VarSpec(VarKind.CONTINUOUS, 0.0, max(0.0, float(hi[j])), "x" + tag))
                sv = model.add_var(VarSpec(VarKind.CONTINUOUS, 0.0, max(0.0, float(-lo[j])), "s" + tag))
                # stable neurons get their activation binary pinned
                if lo[j] >= 0:
                    ac_lo, ac_hi = 0.0, 0.0
                elif hi[j] < 0:
                    ac_lo, ac_hi = 1.0, 1.0
                else:
                    ac_lo, ac_hi = 0.0, 1.0
                acv = model.add_var(VarSpec(VarKind.BINARY, ac_lo, ac_hi, "ac" + tag))
                model.add_constraint(eq(pre - LinearExpr.var(xv) + LinearExpr.var(sv), 0.0))
                model.add_indicator(Indicator(acv, 1, le(LinearExpr.var(xv), 0.0)))
                model.add_indicator(Indicator(acv, 0, le(LinearExpr.var(sv), 0.0)))
                neurons.append((k, j))
                relu_vars[(k, j)] = (xv, sv, acv)
                outs.append(xv)
            else:
                yv = model.add_var(VarSpec(VarKind.CONTINUOUS, float(lo[j]), float(hi[j]), f"y[{k + 1},{j}]"))
                model.add_constraint(eq(pre - LinearExpr.var(yv), 0.0))
                outs.append(yv)
        layer_vars.append(outs)
        inputs = [LinearExpr.var(v) for v in outs]

    return EncodedAttack(
        net=net,
        pert=pert,
        model=model,
        neurons=neurons,
        relu_vars=relu_vars,
        delta_vars=delta_vars,
        output_vars=list(layer_vars[-1]),
        layer_vars=layer_vars,
        pre_bounds=pre_bounds,
        clean_output=forward(net, pert.base_input),
    )


def add_attack_constraint(ea: EncodedAttack, c: AttackConstraint) -> list[int]:
    m = len(ea.output_vars)
    for i in c.indices():
        if not 0 <= i < m:
            raise EncodingError(f"output index {i} out of range for {m} outputs")
    ids = [ea.model.add_constraint(row) for row in c.rows(ea.output_exprs(), ea.clean_output)]
    ea.attack_constraints.append(c)
    return ids


def set_objective(ea: EncodedAttack, kind: ObjectiveKind) -> None:
    cost = Objective(ObjSense.MINIMIZE, ea.perturbation_cost())
    if isinstance(kind, MinPerturbation):
        ea.model.set_objectives([cost])
    elif isinstance(kind, Hierarchical):
        if kind.index is None:
            raise EncodingError("hierarchical objective needs an output index")
        if not 0 <= kind.index < len(ea.output_vars):
            raise EncodingError(f"output index {kind.index} out of range")
        sense = ObjSense.MAXIMIZE if kind.maximize else ObjSense.MINIMIZE
        first = Objective(sense, LinearExpr.var(ea.output_vars[kind.index]))
        ea.model.set_objectives([first, cost])
    else:
        raise EncodingError(f"unknown objective kind {kind!r}")


def fix_pattern(ea: EncodedAttack, pattern: Sequence[int], objective: int | None = 0) -> LpProblem:
    """LP with every activation binary fixed and its implied constraint made hard."""
    pattern = [int(p) for p in pattern]
    if len(pattern) != len(ea.neurons):
        raise EncodingError(f"pattern has {len(pattern)} entries, network has {len(ea.neurons)} ReLU neurons")
    fixed = ea.model.copy()
    ac_value = {}
    for (k, j), p in zip(ea.neurons, pattern):
        acv = ea.relu_vars[(k, j)][2]
        spec = fixed.vars[acv]
        fixed.vars[acv] = VarSpec(spec.kind, float(p), float(p), spec.name)
        ac_value[acv] = p
    indicators, fixed.indicators = fixed.indicators, []
    for ic in indicators:
        if ac_value.get(ic.guard) == ic.guard_value:
            fixed.add_constraint(ic.implied)
    if objective is not None and not fixed.objectives:
        objective = None
    return LpProblem.from_model(fixed, objective)


def layer_values(ea: EncodedAttack, values) -> list[np.ndarray]:
    """Post-activation value of every layer as held in model ``values``."""
    return [np.array([values[v] for v in vs]) for vs in ea.layer_vars]


def complementarity_gap(ea: EncodedAttack, values) -> tuple[float, float]:
    """Worst ``min(x, s)`` over neurons and worst ``min(d+, d-)`` over inputs."""
    neuron = max([0.0] + [min(values[x], values[s]) for x, s, _ in ea.relu_vars.values()])
    inputs = max([0.0] + [min(values[p], values[m]) for p, m in ea.delta_vars.values()])
    return neuron, inputs
