"""
PolicySpec: a scheduling policy as priority and slice expressions over task
features. The executable unit stored in the repository and run by the
simulator.
"""

import math
import re
from typing import Dict, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from scheduler.canonical import content_hash
from scheduler.dsl.expr import Expr, compile_expr, identifiers
from scheduler.errors import InvalidSpec, UnknownIdentifier
from scheduler.models import FEATURES

SLICE_MIN = 100
SLICE_MAX = 100_000
DEFAULT_SLICE = 3_000
MAX_DEPTH = 32

NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_\-]*$")
TAG_RE = re.compile(r"^[A-Za-z0-9_\-]+$")


class ParamDecl(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    value: float
    min: float
    max: float

    @model_validator(mode="after")
    def _ordered(self) -> "ParamDecl":
        if not all(math.isfinite(v) for v in (self.value, self.min, self.max)):
            raise ValueError("param bounds must be finite")
        if self.min > self.max:
            raise ValueError(f"param range [{self.min}, {self.max}] is empty")
        return self

    def in_range(self) -> bool:
        return self.min <= self.value <= self.max


class PolicySpec(BaseModel):
    """
    A scheduling policy.

    ``slice_expr`` is None exactly for non-preemptive policies, which run a
    dispatched task to completion.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = Field(min_length=1)
    description: str = ""
    tags: Tuple[str, ...] = ()
    params: Dict[str, ParamDecl] = Field(default_factory=dict)
    priority_expr: Expr
    slice_expr: Optional[Expr] = None
    preemptive: bool = False

    def param_values(self) -> Dict[str, float]:
        return {name: p.value for name, p in self.params.items()}

    def expressions(self) -> Tuple[Expr, ...]:
        return (self.priority_expr,) + ((self.slice_expr,) if self.slice_expr is not None else ())

    def priority_fn(self):
        return compile_expr(self.priority_expr, self.param_values())

    def slice_fn(self):
        if self.slice_expr is None:
            return None
        return compile_expr(self.slice_expr, self.param_values())


def policy_id(spec: PolicySpec) -> str:
    """Content address of a spec; any edit changes it."""
    return content_hash(spec)


def unbound_identifiers(spec: PolicySpec) -> Tuple[str, ...]:
    unbound = []
    for expr in spec.expressions():
        for kind, name in sorted(identifiers(expr)):
            if kind == "feature" and name not in FEATURES:
                unbound.append(name)
            if kind == "param" and name not in spec.params:
                unbound.append(name)
    return tuple(unbound)


def validate_policy(spec: PolicySpec) -> PolicySpec:
    """Raise on the first validity problem; return the spec unchanged otherwise."""
    if not NAME_RE.match(spec.name):
        raise InvalidSpec(f"invalid policy name '{spec.name}'")
    for tag in spec.tags:
        if not TAG_RE.match(tag):
            raise InvalidSpec(f"invalid tag '{tag}'")
    for name, decl in spec.params.items():
        if name in FEATURES or not NAME_RE.match(name):
            raise InvalidSpec(f"invalid param name '{name}'")
        if not decl.in_range():
            raise InvalidSpec(f"param {name}={decl.value} outside [{decl.min}, {decl.max}]")
    unbound = unbound_identifiers(spec)
    if unbound:
        raise UnknownIdentifier(unbound[0])
    if spec.preemptive and spec.slice_expr is None:
        raise InvalidSpec("preemptive policies need a slice expression")
    if not spec.preemptive and spec.slice_expr is not None:
        raise InvalidSpec("non-preemptive policies run to completion and take no slice")
    return spec
