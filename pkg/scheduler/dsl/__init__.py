"""The policy language: expressions, parser, verification intervals, built-ins."""

from scheduler.dsl.expr import Expr, evaluate, render_expr
from scheduler.dsl.library import apply_patch, builtin, compose
from scheduler.dsl.parser import parse_expr, parse_policy, render_policy
from scheduler.dsl.policy import PolicySpec, policy_id

__all__ = [
    "Expr", "PolicySpec", "apply_patch", "builtin", "compose", "evaluate",
    "parse_expr", "parse_policy", "policy_id", "render_expr", "render_policy",
]
