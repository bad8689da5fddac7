"""
Built-in policies, the fragment library, composition and patching.
"""

import logging
import re
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict, model_validator

from scheduler.canonical import content_hash
from scheduler.dsl.expr import BinOp, Const, Expr, FeatureRef, Neg, add, const, mul, render_expr
from scheduler.dsl.parser import parse_expr, parse_policy, render_policy
from scheduler.dsl.policy import DEFAULT_SLICE, ParamDecl, PolicySpec
from scheduler.errors import (
    EmptyComposition,
    InvalidEdit,
    InvalidSpec,
    PolicySyntaxError,
    UnknownBuiltin,
)

logger = logging.getLogger(__name__)

BUILTIN_SOURCES: Dict[str, str] = {
    "fifo": """
name = fifo
description = "First in first out: run tasks to completion in arrival order. Simple batch baseline."
tags = fifo, batch, simple, arrival
preemptive = false
priority = -arrival_time
slice = inf
""",
    "round_robin": """
name = round_robin
description = "Round robin: rotate runnable tasks with a fixed time quantum, oldest enqueue first."
tags = round-robin, timeslice, interactive
preemptive = true
param quantum = 10000 in [100, 100000]
priority = -enqueue_time
slice = quantum
""",
    "fair_vruntime": """
name = fair_vruntime
description = "Weighted fair share by virtual runtime, the EEVDF-like default scheduler. Good interactive latency and fair CPU shares."
tags = fair, latency, interactive, default, eevdf
preemptive = true
param slice_base = 3000 in [100, 100000]
priority = -vruntime
slice = slice_base
""",
    "sjf": """
name = sjf
description = "Shortest job first: run the shortest expected tasks first to finish many tasks quickly. Favors throughput."
tags = sjf, short, throughput
preemptive = false
priority = -expected_runtime
slice = inf
""",
    "ljf": """
name = ljf
description = "Longest job first: start the longest expected tasks early so a long tail does not stretch batch completion or makespan."
tags = ljf, batch, longtail, long, makespan
preemptive = false
priority = expected_runtime
slice = inf
""",
    "layered_weight": """
name = layered_weight
description = "Layered weight classes: strict priority by weight, fair share by virtual runtime inside a class."
tags = weight, priority, layered, fair
preemptive = true
param layer_scale = 1000000000000 in [1, 1000000000000000]
param slice_base = 3000 in [100, 100000]
priority = weight * layer_scale - vruntime
slice = slice_base
""",
}

BUILTIN_NAMES: Tuple[str, ...] = tuple(BUILTIN_SOURCES)

# Workload families each built-in is registered for in a fresh repository.
BUILTIN_FAMILIES: Dict[str, Tuple[str, ...]] = {
    "fifo": ("custom",),
    "round_robin": ("latency-chain",),
    "fair_vruntime": ("latency-chain", "custom"),
    "sjf": ("custom",),
    "ljf": ("batch-longtail", "build-dag"),
    "layered_weight": ("custom",),
}

_BUILTINS: Dict[str, PolicySpec] = {}


def builtin(name: str) -> PolicySpec:
    """Canonical spec of a built-in policy; fair_vruntime is the comparison baseline."""
    if name not in BUILTIN_SOURCES:
        raise UnknownBuiltin(f"no built-in policy named '{name}'", {"name": name, "known": list(BUILTIN_NAMES)})
    if name not in _BUILTINS:
        _BUILTINS[name] = parse_policy(BUILTIN_SOURCES[name])
    return _BUILTINS[name]


# Fragments -------------------------------------------------------------

FRAGMENTS: Dict[str, Expr] = {
    "fifo_order": Neg(arg=FeatureRef(name="arrival_time")),
    "fair_order": Neg(arg=FeatureRef(name="vruntime")),
    "longest_first": FeatureRef(name="expected_runtime"),
    "shortest_first": Neg(arg=FeatureRef(name="expected_runtime")),
    "aging": FeatureRef(name="wait_time"),
    "weight": FeatureRef(name="weight"),
}

Fragment = Union[str, Expr]


def fragment(item: Fragment) -> Tuple[str, Expr]:
    """Resolve a fragment given by library name, source text or tree."""
    if isinstance(item, str):
        if item in FRAGMENTS:
            return item, FRAGMENTS[item]
        expr = parse_expr(item)
        return render_expr(expr), expr
    return render_expr(item), item


def compose(
    primitives: Sequence[Fragment],
    weights: Sequence[float],
    name: Optional[str] = None,
    preemptive: bool = False,
    slice_us: Optional[float] = None,
) -> PolicySpec:
    """
    Weighted sum of fragments as a priority expression.

    A weight of exactly 1.0 keeps the fragment as is, so a singleton
    composition of a built-in's ordering yields that ordering unchanged.
    """
    if not primitives:
        raise EmptyComposition("composition needs at least one fragment")
    if len(primitives) != len(weights):
        raise EmptyComposition(
            f"{len(primitives)} fragments but {len(weights)} weights",
            {"fragments": len(primitives), "weights": len(weights)},
        )

    terms: List[Expr] = []
    provenance: List[str] = []
    for item, weight in zip(primitives, weights):
        label, expr = fragment(item)
        weight = float(weight)
        terms.append(expr if weight == 1.0 else mul(const(weight), expr))
        provenance.append(f"{weight:g}*{label}")

    priority = terms[0]
    for term in terms[1:]:
        priority = add(priority, term)

    slice_expr = None
    if preemptive:
        slice_expr = const(slice_us if slice_us is not None else DEFAULT_SLICE)
    spec = PolicySpec(
        name=name or f"composed-{content_hash(priority)[:6]}",
        description=f"Composed from primitives: {' + '.join(provenance)}.",
        tags=("composed",),
        priority_expr=priority,
        slice_expr=slice_expr,
        preemptive=preemptive,
    )
    return _revalidate(spec)


# Patching --------------------------------------------------------------

class PatchEdit(BaseModel):
    """
    One edit of a policy.

    ``priority``/``slice`` take ``expr`` source text (``slice`` also takes
    ``inf``), ``param`` takes ``name`` and ``value`` (plus ``min``/``max`` to
    declare a new param) and ``preemptive`` takes ``flag``.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    target: Literal["priority", "slice", "param", "preemptive"]
    expr: Optional[str] = None
    name: Optional[str] = None
    value: Optional[float] = None
    min: Optional[float] = None
    max: Optional[float] = None
    flag: Optional[bool] = None

    @model_validator(mode="after")
    def _fields_for_target(self) -> "PatchEdit":
        if self.target in ("priority", "slice") and self.expr is None:
            raise ValueError(f"{self.target} edit needs 'expr'")
        if self.target == "param" and (self.name is None or self.value is None):
            raise ValueError("param edit needs 'name' and 'value'")
        if self.target == "preemptive" and self.flag is None:
            raise ValueError("preemptive edit needs 'flag'")
        return self

    def summary(self) -> str:
        if self.target == "param":
            return f"{self.name}={self.value:g}"
        if self.target == "preemptive":
            return f"preemptive={'true' if self.flag else 'false'}"
        return f"{self.target}={self.expr}"


_PATCH_SUFFIX = re.compile(r"-p[0-9a-f]{6}$")
_PATCH_NOTE = re.compile(r"\s*\[patched from [^\]]*\]$")


def apply_patch(base: PolicySpec, edits: Sequence[Union[PatchEdit, dict]]) -> PolicySpec:
    """
    Apply ``edits`` in order and revalidate the result from source.

    The base is never modified; any failing edit rejects the whole patch.
    """
    try:
        items = [e if isinstance(e, PatchEdit) else PatchEdit.model_validate(e) for e in edits]
    except ValueError as exc:
        raise InvalidEdit(f"malformed edit: {exc}") from None
    if not items:
        raise InvalidEdit("patch has no edits")

    params = dict(base.params)
    priority = base.priority_expr
    slice_expr = base.slice_expr
    preemptive = base.preemptive

    for edit in items:
        if edit.target == "param":
            if edit.name in params:
                current = params[edit.name]
                lo = current.min if edit.min is None else edit.min
                hi = current.max if edit.max is None else edit.max
            elif edit.min is not None and edit.max is not None:
                lo, hi = edit.min, edit.max
            else:
                raise InvalidEdit(f"unknown param '{edit.name}'", {"name": edit.name})
            if not lo <= edit.value <= hi:
                raise InvalidEdit(f"param {edit.name}={edit.value:g} outside [{lo:g}, {hi:g}]")
            params[edit.name] = ParamDecl(value=edit.value, min=lo, max=hi)
        elif edit.target == "priority":
            priority = parse_expr(edit.expr, params)
        elif edit.target == "slice":
            if edit.expr.strip() == "inf":
                slice_expr, preemptive = None, False
            else:
                slice_expr, preemptive = parse_expr(edit.expr, params), True
        else:
            preemptive = bool(edit.flag)
            if preemptive and slice_expr is None:
                slice_expr = const(DEFAULT_SLICE)
            if not preemptive:
                slice_expr = None

    summary = "; ".join(e.summary() for e in items)
    root = _PATCH_SUFFIX.sub("", base.name)
    description = _PATCH_NOTE.sub("", base.description)
    patched = PolicySpec(
        name=f"{root}-p{content_hash([e.model_dump() for e in items] + [base.name])[:6]}",
        description=f"{description} [patched from {base.name}: {summary}]".strip(),
        tags=base.tags,
        params=params,
        priority_expr=priority,
        slice_expr=slice_expr,
        preemptive=preemptive,
    )
    try:
        return _revalidate(patched)
    except (PolicySyntaxError, InvalidSpec) as exc:
        raise InvalidEdit(f"patched policy is invalid: {exc.message}") from None


def with_params(base: PolicySpec, assignments: Dict[str, float]) -> PolicySpec:
    """Set param values; the configure-existing plan variant."""
    if not assignments:
        return base
    return apply_patch(base, [PatchEdit(target="param", name=k, value=v) for k, v in sorted(assignments.items())])


def _revalidate(spec: PolicySpec) -> PolicySpec:
    return parse_policy(render_policy(spec))


def has_term(spec: PolicySpec, term: Expr) -> bool:
    """True when ``term`` (optionally scaled) is a summand of the priority."""
    stack = [spec.priority_expr]
    while stack:
        node = stack.pop()
        if node == term:
            return True
        if isinstance(node, BinOp) and node.op == "add":
            stack.extend((node.left, node.right))
        elif isinstance(node, BinOp) and node.op == "mul" and isinstance(node.left, Const):
            stack.append(node.right)
    return False
