"""
Decision providers for the agent loop.

A provider turns observations into choices: which repository query to run,
which plan variant a search result warrants, how to repair a policy the
verifier rejected. ``HeuristicProvider`` is the deterministic rule set that
ships; a model-backed provider implements the same methods out of process.
"""

import logging
from abc import ABC, abstractmethod
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field

from scheduler.dsl.expr import render_expr
from scheduler.dsl.library import FRAGMENTS, PatchEdit, apply_patch, has_term
from scheduler.dsl.parser import parse_policy
from scheduler.dsl.policy import DEFAULT_SLICE, PolicySpec

logger = logging.getLogger(__name__)

THETA_HIGH = 0.75
THETA_LOW = 0.3
MAX_REFINEMENTS = 3
AGING_COEFFICIENT = 0.01
LATENCY_SLICE_US = 2000

FAMILY_QUERIES: Dict[str, str] = {
    "build-dag": "build dag makespan parallel",
    "latency-chain": "latency interactive wakeup",
    "batch-longtail": "batch longtail",
    "custom": "throughput",
}

# (fragments, weights, preemptive) per goal; the first fragment is the goal's key term
GOAL_FRAGMENTS: Dict[str, Tuple[Tuple[str, ...], Tuple[float, ...], bool]] = {
    "min_avg_completion": (("longest_first", "aging"), (1.0, AGING_COEFFICIENT), False),
    "min_makespan": (("longest_first", "aging"), (1.0, AGING_COEFFICIENT), False),
    "min_p99": (("fair_order",), (1.0,), True),
    "max_throughput": (("shortest_first", "aging"), (1.0, AGING_COEFFICIENT), False),
}

STARVATION_CODES = {"STARVATION", "UNFAIR"}
REGRESSION_CODES = {"PERF_REGRESSION"}


class ConfigureExisting(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["configure"] = "configure"
    policy_id: str
    assignments: Dict[str, float] = Field(default_factory=dict)


class Patch(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["patch"] = "patch"
    policy_id: str
    edits: Tuple[PatchEdit, ...]


class ComposeNew(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["compose"] = "compose"
    fragments: Tuple[str, ...]
    weights: Tuple[float, ...]
    preemptive: bool = False
    slice_us: Optional[int] = None


PlanVariant = Union[ConfigureExisting, Patch, ComposeNew]


class Plan(BaseModel):
    model_config = ConfigDict(frozen=True)

    variant: PlanVariant = Field(discriminator="kind")
    rationale: str
    direction: Literal["decrease", "increase"]
    score: float = 0.0

    @property
    def kind(self) -> str:
        return self.variant.kind


class SearchHit(BaseModel):
    """The fields of a repository search hit a provider looks at."""

    id: str
    name: str
    status: str
    normalized: float
    source: str


def goal_direction(goal: str) -> str:
    return "increase" if goal == "max_throughput" else "decrease"


class DecisionProvider(ABC):
    @abstractmethod
    def query(self, family: str, goal: str) -> str:
        ...

    @abstractmethod
    def plan(self, goal: str, hits: Sequence[SearchHit], escalation: int = 0) -> Plan:
        ...

    @abstractmethod
    def refine(self, original: PolicySpec, failures: Sequence[Sequence[str]]) -> Optional[PolicySpec]:
        """Repair ``original`` given the error codes of each failed attempt, or None."""


class HeuristicProvider(DecisionProvider):
    """
    Rule-based decisions.

    The top search hit picks the starting level: configure at normalized
    score >= theta_high, patch at >= theta_low, compose otherwise. Each
    escalation step moves one level down.
    """

    def __init__(self, theta_high: float = THETA_HIGH, theta_low: float = THETA_LOW):
        self.theta_high = theta_high
        self.theta_low = theta_low

    def query(self, family: str, goal: str) -> str:
        return FAMILY_QUERIES.get(family, FAMILY_QUERIES["custom"])

    def level(self, score: float) -> int:
        if score >= self.theta_high:
            return 0
        if score >= self.theta_low:
            return 1
        return 2

    def plan(self, goal: str, hits: Sequence[SearchHit], escalation: int = 0) -> Plan:
        direction = goal_direction(goal)
        top = hits[0] if hits else None
        level = min(2, (self.level(top.normalized) if top else 2) + escalation)

        if top is not None and level == 1:
            edits = self._goal_edits(goal, parse_policy(top.source))
            if edits:
                return Plan(variant=Patch(policy_id=top.id, edits=edits), direction=direction, score=top.normalized,
                            rationale=f"{top.name} matches at {top.normalized:.2f}; add the {goal} key term")
            # nothing to patch: configure unless we were told to go lower
            level = 0 if escalation == 0 else 2

        if top is not None and level == 0:
            spec = parse_policy(top.source)
            return Plan(variant=ConfigureExisting(policy_id=top.id, assignments=self._assignments(goal, spec)),
                        direction=direction, score=top.normalized,
                        rationale=f"{top.name} matches at {top.normalized:.2f}; configure it for {goal}")

        fragments, weights, preemptive = GOAL_FRAGMENTS[goal]
        return Plan(
            variant=ComposeNew(fragments=fragments, weights=weights, preemptive=preemptive,
                               slice_us=DEFAULT_SLICE if preemptive else None),
            direction=direction,
            score=top.normalized if top else 0.0,
            rationale=f"compose {' + '.join(fragments)} for {goal}"
                      + (f" (best match {top.name} at {top.normalized:.2f})" if top else " (no match)"),
        )

    def _goal_edits(self, goal: str, spec: PolicySpec) -> Tuple[PatchEdit, ...]:
        key = GOAL_FRAGMENTS[goal][0][0]
        if has_term(spec, FRAGMENTS[key]):
            return ()
        return (PatchEdit(target="priority", expr=f"{render_expr(spec.priority_expr)} + {render_expr(FRAGMENTS[key])}"),)

    def _assignments(self, goal: str, spec: PolicySpec) -> Dict[str, float]:
        # shorter slices for latency goals
        if goal != "min_p99":
            return {}
        return {
            name: float(LATENCY_SLICE_US)
            for name, decl in sorted(spec.params.items())
            if name in ("slice_base", "quantum") and decl.min <= LATENCY_SLICE_US <= decl.max
        }

    def refine(self, original: PolicySpec, failures: Sequence[Sequence[str]]) -> Optional[PolicySpec]:
        """
        Starvation or unfairness adds ``c * wait_time`` with c = 0.01 doubling
        per occurrence; a performance regression makes the policy preemptive
        with the default slice. Anything else is not repairable.
        """
        latest = set(failures[-1]) if failures else set()
        if not latest or not latest <= (STARVATION_CODES | REGRESSION_CODES):
            return None
        aging_rounds = sum(1 for codes in failures if set(codes) & STARVATION_CODES)
        preempt = any(set(codes) & REGRESSION_CODES for codes in failures)

        edits: List[PatchEdit] = []
        if preempt and not original.preemptive:
            edits.append(PatchEdit(target="preemptive", flag=True))
        if aging_rounds:
            coefficient = AGING_COEFFICIENT * 2 ** (aging_rounds - 1)
            edits.append(PatchEdit(target="priority",
                                   expr=f"{render_expr(original.priority_expr)} + {coefficient:g} * wait_time"))
        if not edits:
            return None
        refined = apply_patch(original, edits)
        logger.info("refined %s into %s: %s", original.name, refined.name, "; ".join(e.summary() for e in edits))
        return refined
