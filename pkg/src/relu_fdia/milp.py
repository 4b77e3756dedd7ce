"""Mixed-integer linear programs with indicator constraints and ordered objectives."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping


class ModelError(ValueError):
    pass


class UnsoundBigM(ModelError):
    """A big-M constant would need an unbounded variable."""


class VarKind(str, enum.Enum):
    CONTINUOUS = "continuous"
    BINARY = "binary"


class Sense(str, enum.Enum):
    LE = "<="
    EQ = "="
    GE = ">="


class ObjSense(str, enum.Enum):
    MINIMIZE = "min"
    MAXIMIZE = "max"


@dataclass(frozen=True)
class VarSpec:
    kind: VarKind = VarKind.CONTINUOUS
    lower: float = 0.0
    upper: float = math.inf
    name: str = ""

    def __post_init__(self):
        if math.isnan(self.lower) or math.isnan(self.upper) or self.lower > self.upper:
            raise ModelError(f"variable {self.name!r}: invalid bounds [{self.lower}, {self.upper}]")
        if self.lower == math.inf or self.upper == -math.inf:
            raise ModelError(f"variable {self.name!r}: empty bounds [{self.lower}, {self.upper}]")
        if self.kind is VarKind.BINARY and (self.lower < 0 or self.upper > 1):
            raise ModelError(f"binary {self.name!r} must have bounds within [0, 1]")

    @property
    def is_binary(self) -> bool:
        return self.kind is VarKind.BINARY


class LinearExpr:
    """sum(coef * var) + constant, at most one term per variable."""

    __slots__ = ("terms", "constant")

    def __init__(self, terms: Iterable[tuple[float, int]] | Mapping[int, float] = (), constant: float = 0.0):
        merged: dict[int, float] = {}
        items = terms.items() if isinstance(terms, Mapping) else ((v, c) for c, v in terms)
        for var, coef in items:
            coef = float(coef)
            if not math.isfinite(coef):
                raise ModelError(f"non-finite coefficient {coef} on variable {var}")
            merged[int(var)] = merged.get(int(var), 0.0) + coef
        self.terms = {v: c for v, c in merged.items() if c != 0.0}
        self.constant = float(constant)
        if not math.isfinite(self.constant):
            raise ModelError("non-finite expression constant")

    @classmethod
    def var(cls, v: int, coef: float = 1.0) -> "LinearExpr":
        return cls([(coef, v)])

    def __add__(self, other):
        if isinstance(other, LinearExpr):
            terms = dict(self.terms)
            for v, c in other.terms.items():
                terms[v] = terms.get(v, 0.0) + c
            return LinearExpr(terms, self.constant + other.constant)
        return LinearExpr(self.terms, self.constant + float(other))

    __radd__ = __add__

    def __neg__(self):
        return LinearExpr({v: -c for v, c in self.terms.items()}, -self.constant)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, k: float):
        k = float(k)
        return LinearExpr({v: c * k for v, c in self.terms.items()}, self.constant * k)

    __rmul__ = __mul__

    def __eq__(self, other):
        return (
            isinstance(other, LinearExpr)
            and self.terms == other.terms
            and self.constant == other.constant
        )

    def value(self, values) -> float:
        return self.constant + sum(c * values[v] for v, c in self.terms.items())

    def vars(self) -> list[int]:
        return sorted(self.terms)

    def __repr__(self):
        parts = [f"{c:+g}*v{v}" for v, c in sorted(self.terms.items())]
        if self.constant or not parts:
            parts.append(f"{self.constant:+g}")
        return " ".join(parts)


@dataclass(frozen=True)
class Constraint:
    expr: LinearExpr
    sense: Sense
    rhs: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.rhs):
            raise ModelError(f"non-finite right-hand side {self.rhs}")
        object.__setattr__(self, "sense", Sense(self.sense))
        if self.expr.constant:
            # keep constants on the right-hand side
            object.__setattr__(self, "rhs", self.rhs - self.expr.constant)
            object.__setattr__(self, "expr", LinearExpr(self.expr.terms))

    def residual(self, values) -> float:
        """Amount by which ``values`` violate the constraint (0 when satisfied)."""
        lhs = self.expr.value(values)
        if self.sense is Sense.LE:
            return max(0.0, lhs - self.rhs)
        if self.sense is Sense.GE:
            return max(0.0, self.rhs - lhs)
        return abs(lhs - self.rhs)


def le(expr: LinearExpr, rhs: float = 0.0) -> Constraint:
    return Constraint(expr, Sense.LE, rhs)


def ge(expr: LinearExpr, rhs: float = 0.0) -> Constraint:
    return Constraint(expr, Sense.GE, rhs)


def eq(expr: LinearExpr, rhs: float = 0.0) -> Constraint:
    return Constraint(expr, Sense.EQ, rhs)


@dataclass(frozen=True)
class Indicator:
    """``guard == guard_value`` implies ``implied``."""

    guard: int
    guard_value: int
    implied: Constraint

    def __post_init__(self):
        if self.guard_value not in (0, 1):
            raise ModelError("indicator guard_value must be 0 or 1")


@dataclass(frozen=True)
class Objective:
    sense: ObjSense
    expr: LinearExpr

    def __post_init__(self):
        object.__setattr__(self, "sense", ObjSense(self.sense))


@dataclass
class MilpModel:
    vars: list[VarSpec] = field(default_factory=list)
    constraints: list[Constraint] = field(default_factory=list)
    indicators: list[Indicator] = field(default_factory=list)
    objectives: list[Objective] = field(default_factory=list)
    frozen: bool = False

    def _writable(self):
        if self.frozen:
            raise ModelError("model is frozen")

    def _check_vars(self, expr: LinearExpr):
        n = len(self.vars)
        for v in expr.terms:
            if not 0 <= v < n:
                raise ModelError(f"unknown variable {v} (model has {n})")

    @property
    def num_vars(self) -> int:
        return len(self.vars)

    def add_var(self, spec: VarSpec | None = None, **kwargs) -> int:
        self._writable()
        if spec is None:
            spec = VarSpec(**kwargs)
        self.vars.append(spec)
        return len(self.vars) - 1

    def add_constraint(self, c: Constraint) -> int:
        self._writable()
        self._check_vars(c.expr)
        self.constraints.append(c)
        return len(self.constraints) - 1

    def add_indicator(self, ic: Indicator) -> int:
        self._writable()
        if not 0 <= ic.guard < len(self.vars):
            raise ModelError(f"unknown guard variable {ic.guard}")
        if not self.vars[ic.guard].is_binary:
            raise ModelError(f"indicator guard {self.vars[ic.guard].name or ic.guard!r} is not binary")
        self._check_vars(ic.implied.expr)
        self.indicators.append(ic)
        return len(self.indicators) - 1

    def add_objective(self, obj: Objective) -> int:
        self._writable()
        self._check_vars(obj.expr)
        self.objectives.append(obj)
        return len(self.objectives) - 1

    def set_objectives(self, objs: Iterable[Objective]):
        self._writable()
        objs = list(objs)
        for o in objs:
            self._check_vars(o.expr)
        self.objectives = objs

    def freeze(self) -> "MilpModel":
        self.frozen = True
        return self

    def copy(self) -> "MilpModel":
        """Unfrozen copy; entities are immutable so a shallow list copy suffices."""
        return MilpModel(
            list(self.vars), list(self.constraints), list(self.indicators), list(self.objectives)
        )

    def binaries(self) -> list[int]:
        return [i for i, v in enumerate(self.vars) if v.is_binary]

    def bounds(self) -> dict[int, tuple[float, float]]:
        return {i: (v.lower, v.upper) for i, v in enumerate(self.vars)}

    def max_violation(self, values, include_indicators: bool = True) -> float:
        """Largest bound, constraint, integrality or indicator violation of ``values``."""
        worst = 0.0
        for i, spec in enumerate(self.vars):
            x = values[i]
            worst = max(worst, spec.lower - x, x - spec.upper)
            if spec.is_binary:
                worst = max(worst, min(abs(x), abs(x - 1.0)))
        for c in self.constraints:
            worst = max(worst, c.residual(values))
        if include_indicators:
            for ic in self.indicators:
                if round(values[ic.guard]) == ic.guard_value:
                    worst = max(worst, ic.implied.residual(values))
        return worst

    def to_text(self) -> str:
        """Human-readable listing, one entity per line."""

        def name(v):
            return self.vars[v].name or f"v{v}"

        def fmt(expr: LinearExpr):
            if not expr.terms:
                return "0"
            return " ".join(f"{c:+.12g} {name(v)}" for v, c in sorted(expr.terms.items()))

        lines = []
        for i, v in enumerate(self.vars):
            lines.append(f"var {i} {name(i)} {v.kind.value} [{v.lower:.12g}, {v.upper:.12g}]")
        for i, c in enumerate(self.constraints):
            lines.append(f"con {i}: {fmt(c.expr)} {c.sense.value} {c.rhs:.12g}")
        for i, ic in enumerate(self.indicators):
            c = ic.implied
            lines.append(
                f"ind {i}: {name(ic.guard)} = {ic.guard_value} -> {fmt(c.expr)} {c.sense.value} {c.rhs:.12g}"
            )
        for i, o in enumerate(self.objectives):
            const = f" {o.expr.constant:+.12g}" if o.expr.constant else ""
            lines.append(f"obj {i}: {o.sense.value} {fmt(o.expr)}{const}")
        return "\n".join(lines) + "\n"


def expr_range(expr: LinearExpr, bounds: Mapping[int, tuple[float, float]]) -> tuple[float, float]:
    lo = hi = expr.constant
    for v, c in expr.terms.items():
        vlo, vhi = bounds[v]
        if c > 0:
            lo += c * vlo
            hi += c * vhi
        else:
            lo += c * vhi
            hi += c * vlo
    return lo, hi


def _as_le(c: Constraint) -> list[tuple[LinearExpr, float]]:
    if c.sense is Sense.LE:
        return [(c.expr, c.rhs)]
    if c.sense is Sense.GE:
        return [(-c.expr, -c.rhs)]
    return [(c.expr, c.rhs), (-c.expr, -c.rhs)]


def big_m_rows(ic: Indicator, bounds: Mapping[int, tuple[float, float]]) -> list[Constraint]:
    """Big-M form of one indicator: ``expr <= rhs + M * (guard off)`` per inequality."""
    rows = []
    for expr, rhs in _as_le(ic.implied):
        for v in expr.terms:
            lo, hi = bounds.get(v, (-math.inf, math.inf))
            if not (math.isfinite(lo) and math.isfinite(hi)):
                raise UnsoundBigM(
                    f"variable {v} in an implied constraint has unbounded interval [{lo}, {hi}]"
                )
        big_m = max(0.0, expr_range(expr, bounds)[1] - rhs)
        g = LinearExpr.var(ic.guard)
        if ic.guard_value == 1:
            # expr <= rhs + M (1 - g)
            rows.append(le(expr + big_m * g, rhs + big_m))
        else:
            # expr <= rhs + M g
            rows.append(le(expr - big_m * g, rhs))
    return rows


def lower_indicators(
    model: MilpModel, bounds: Mapping[int, tuple[float, float]] | None = None
) -> MilpModel:
    """Replace every indicator by big-M inequalities valid over ``bounds``.

    ``bounds`` defaults to the model's own variable bounds; entries given override them.
    """
    all_bounds = model.bounds()
    if bounds is not None:
        all_bounds.update(bounds)
    out = MilpModel(list(model.vars), list(model.constraints), [], list(model.objectives))
    for ic in model.indicators:
        for row in big_m_rows(ic, all_bounds):
            out.add_constraint(row)
    if model.frozen:
        out.freeze()
    return out
