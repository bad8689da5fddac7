"""
Expression trees of the policy language.

Trees are finite and loop-free by construction. Nodes are frozen pydantic
models, so equality is structural and the JSON form is free.
"""

from typing import Annotated, Callable, Dict, Literal, Mapping, Set, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from scheduler.errors import EvalDivisionByZero, UnknownIdentifier
from scheduler.models import TaskRuntimeState, features_of


class _Node(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class Const(_Node):
    op: Literal["const"] = "const"
    value: float


class FeatureRef(_Node):
    op: Literal["feature"] = "feature"
    name: str


class ParamRef(_Node):
    op: Literal["param"] = "param"
    name: str


class Neg(_Node):
    op: Literal["neg"] = "neg"
    arg: "Expr"


class BinOp(_Node):
    op: Literal["add", "sub", "mul", "div"]
    left: "Expr"
    right: "Expr"


class Call(_Node):
    op: Literal["min", "max", "clamp"]
    args: Tuple["Expr", ...]

    @model_validator(mode="after")
    def _arity(self) -> "Call":
        if self.op == "clamp" and len(self.args) != 3:
            raise ValueError("clamp takes exactly 3 arguments")
        if self.op in ("min", "max") and len(self.args) < 2:
            raise ValueError(f"{self.op} takes at least 2 arguments")
        return self


Expr = Annotated[
    Union[Const, FeatureRef, ParamRef, Neg, BinOp, Call],
    Field(discriminator="op"),
]

for _model in (Neg, BinOp, Call):
    _model.model_rebuild()


class ExprBox(_Node):
    """Wrapper used to (de)serialize a bare expression."""

    expr: Expr


# Small constructors used by the library and by tests.
def const(value: float) -> Const:
    return Const(value=float(value))


def feature(name: str) -> FeatureRef:
    return FeatureRef(name=name)


def param(name: str) -> ParamRef:
    return ParamRef(name=name)


def neg(arg: "Expr") -> Neg:
    return Neg(arg=arg)


def binop(op: str, left: "Expr", right: "Expr") -> BinOp:
    return BinOp(op=op, left=left, right=right)


def add(left: "Expr", right: "Expr") -> BinOp:
    return binop("add", left, right)


def mul(left: "Expr", right: "Expr") -> BinOp:
    return binop("mul", left, right)


# Rendering -------------------------------------------------------------

_PRECEDENCE = {"add": 1, "sub": 1, "mul": 2, "div": 2}
_SYMBOL = {"add": "+", "sub": "-", "mul": "*", "div": "/"}


def _precedence(expr: "Expr") -> int:
    if isinstance(expr, BinOp):
        return _PRECEDENCE[expr.op]
    if isinstance(expr, Neg):
        return 3
    return 4


def format_number(value: float) -> str:
    return repr(float(value))


def render_expr(expr: "Expr") -> str:
    """Concrete syntax with the minimum parentheses that keep the tree shape."""
    if isinstance(expr, Const):
        return format_number(expr.value)
    if isinstance(expr, (FeatureRef, ParamRef)):
        return expr.name
    if isinstance(expr, Neg):
        if isinstance(expr.arg, Const):
            # "-5.0" would read back as a negative constant
            return f"-({format_number(expr.arg.value)})"
        inner = render_expr(expr.arg)
        return f"-({inner})" if _precedence(expr.arg) < 3 else f"-{inner}"
    if isinstance(expr, BinOp):
        prec = _PRECEDENCE[expr.op]
        left = render_expr(expr.left)
        right = render_expr(expr.right)
        if _precedence(expr.left) < prec:
            left = f"({left})"
        if _precedence(expr.right) <= prec:
            right = f"({right})"
        return f"{left} {_SYMBOL[expr.op]} {right}"
    if isinstance(expr, Call):
        return f"{expr.op}({', '.join(render_expr(a) for a in expr.args)})"
    raise TypeError(f"not an expression node: {expr!r}")


# Structure queries -----------------------------------------------------

def children(expr: "Expr") -> Tuple["Expr", ...]:
    if isinstance(expr, Neg):
        return (expr.arg,)
    if isinstance(expr, BinOp):
        return (expr.left, expr.right)
    if isinstance(expr, Call):
        return expr.args
    return ()


def depth(expr: "Expr") -> int:
    kids = children(expr)
    return 1 + (max(depth(k) for k in kids) if kids else 0)


def identifiers(expr: "Expr") -> Set[Tuple[str, str]]:
    """All (kind, name) references in the tree, kind in {feature, param}."""
    found: Set[Tuple[str, str]] = set()
    stack = [expr]
    while stack:
        node = stack.pop()
        if isinstance(node, FeatureRef):
            found.add(("feature", node.name))
        elif isinstance(node, ParamRef):
            found.add(("param", node.name))
        stack.extend(children(node))
    return found


def referenced_features(expr: "Expr") -> Set[str]:
    return {name for kind, name in identifiers(expr) if kind == "feature"}


def scale(expr: "Expr", factor: float) -> "Expr":
    return mul(const(factor), expr)


# Evaluation ------------------------------------------------------------

Compiled = Callable[[Mapping[str, float]], float]


def compile_expr(expr: "Expr", params: Mapping[str, float]) -> Compiled:
    """
    Turn a tree into a closure over a feature mapping.

    Param references are bound to their values at compile time, so the
    closure is only a function of the task features.
    """
    if isinstance(expr, Const):
        value = expr.value
        return lambda f: value
    if isinstance(expr, FeatureRef):
        name = expr.name

        def read(f: Mapping[str, float]) -> float:
            try:
                return f[name]
            except KeyError:
                raise UnknownIdentifier(name) from None

        return read
    if isinstance(expr, ParamRef):
        if expr.name not in params:
            raise UnknownIdentifier(expr.name)
        value = float(params[expr.name])
        return lambda f: value
    if isinstance(expr, Neg):
        inner = compile_expr(expr.arg, params)
        return lambda f: -inner(f)
    if isinstance(expr, BinOp):
        left = compile_expr(expr.left, params)
        right = compile_expr(expr.right, params)
        if expr.op == "add":
            return lambda f: left(f) + right(f)
        if expr.op == "sub":
            return lambda f: left(f) - right(f)
        if expr.op == "mul":
            return lambda f: left(f) * right(f)

        def divide(f: Mapping[str, float]) -> float:
            divisor = right(f)
            if divisor == 0:
                raise EvalDivisionByZero("division by zero during evaluation")
            return left(f) / divisor

        return divide
    if isinstance(expr, Call):
        args = [compile_expr(a, params) for a in expr.args]
        if expr.op == "min":
            return lambda f: min(a(f) for a in args)
        if expr.op == "max":
            return lambda f: max(a(f) for a in args)
        value, lo, hi = args
        return lambda f: min(max(value(f), lo(f)), hi(f))
    raise TypeError(f"not an expression node: {expr!r}")


def evaluate(
    expr: "Expr",
    state: "TaskRuntimeState | Mapping[str, float]",
    params: Mapping[str, float] = None,
) -> float:
    """Evaluate ``expr`` for one task state with the given param values."""
    return compile_expr(expr, params or {})(features_of(state))


def param_values(declared: Mapping[str, "object"]) -> Dict[str, float]:
    """Extract values from ParamDecl-like objects or plain numbers."""
    return {name: float(getattr(p, "value", p)) for name, p in declared.items()}
