"""
Interval arithmetic over policy expressions.

Features range over FEATURE_RANGES and params over their declared
``[min, max]``, so a verdict holds for every configuration of the policy,
not only for its current param values.
"""

import math
from dataclasses import dataclass
from typing import List, Mapping, Optional, Tuple

from scheduler.dsl.expr import BinOp, Call, Const, Expr, FeatureRef, Neg, ParamRef, children
from scheduler.dsl.policy import ParamDecl
from scheduler.models import FEATURE_RANGES


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def contains_zero(self) -> bool:
        return self.lo <= 0.0 <= self.hi

    def __neg__(self) -> "Interval":
        return Interval(-self.hi, -self.lo)

    def __add__(self, other: "Interval") -> "Interval":
        return _bounded(self.lo + other.lo, self.hi + other.hi)

    def __sub__(self, other: "Interval") -> "Interval":
        return _bounded(self.lo - other.hi, self.hi - other.lo)

    def __mul__(self, other: "Interval") -> "Interval":
        products = [_mul(a, b) for a in (self.lo, self.hi) for b in (other.lo, other.hi)]
        return Interval(min(products), max(products))

    def reciprocal(self) -> "Interval":
        # only defined when 0 is outside the interval
        return Interval(1.0 / self.hi, 1.0 / self.lo)


def _bounded(lo: float, hi: float) -> Interval:
    # inf - inf widens to the whole line
    return Interval(-math.inf if math.isnan(lo) else lo, math.inf if math.isnan(hi) else hi)


def _mul(a: float, b: float) -> float:
    # 0 * inf is 0 for bounds
    if a == 0.0 or b == 0.0:
        return 0.0
    return a * b


def feature_interval(name: str) -> Interval:
    lo, hi = FEATURE_RANGES[name]
    return Interval(lo, hi)


def interval_of(
    expr: Expr,
    params: Mapping[str, ParamDecl],
    unsafe: Optional[List[Expr]] = None,
) -> Interval:
    """
    Bound the value of ``expr``.

    Division nodes whose divisor interval contains zero are appended to
    ``unsafe`` (when given); their own result is then unbounded.
    """
    if isinstance(expr, Const):
        return Interval(expr.value, expr.value)
    if isinstance(expr, FeatureRef):
        return feature_interval(expr.name)
    if isinstance(expr, ParamRef):
        decl = params[expr.name]
        return Interval(decl.min, decl.max)
    if isinstance(expr, Neg):
        return -interval_of(expr.arg, params, unsafe)
    if isinstance(expr, BinOp):
        left = interval_of(expr.left, params, unsafe)
        right = interval_of(expr.right, params, unsafe)
        if expr.op == "add":
            return left + right
        if expr.op == "sub":
            return left - right
        if expr.op == "mul":
            return left * right
        if right.contains_zero():
            if unsafe is not None:
                unsafe.append(expr)
            return Interval(-math.inf, math.inf)
        return left * right.reciprocal()
    if isinstance(expr, Call):
        bounds = [interval_of(a, params, unsafe) for a in expr.args]
        if expr.op == "min":
            return Interval(min(b.lo for b in bounds), min(b.hi for b in bounds))
        if expr.op == "max":
            return Interval(max(b.lo for b in bounds), max(b.hi for b in bounds))
        value, lo, hi = bounds
        return Interval(min(max(value.lo, lo.lo), hi.hi), min(max(value.hi, lo.hi), hi.hi))
    raise TypeError(f"not an expression node: {expr!r}")


def unsafe_divisions(expr: Expr, params: Mapping[str, ParamDecl]) -> Tuple[Expr, ...]:
    found: List[Expr] = []
    interval_of(expr, params, found)
    return tuple(found)


def depends_on(expr: Expr, feature: str) -> bool:
    if isinstance(expr, FeatureRef):
        return expr.name == feature
    return any(depends_on(c, feature) for c in children(expr))
