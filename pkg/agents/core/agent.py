"""
The scheduler optimization agent: observe -> plan -> execute -> learn as a
LangGraph state graph, talking to the control plane only through its
JSON-RPC tools.
"""

import logging
import operator
import uuid
from typing import Annotated, Any, Dict, List, Optional, Sequence, Tuple, TypedDict

from dotenv import load_dotenv
from langgraph.checkpoint.memory import MemorySaver
from langgraph.graph import END, START, StateGraph
from pydantic import BaseModel, ConfigDict

from agents.client import RemoteError, RpcClient
from agents.core.provider import (
    MAX_REFINEMENTS,
    DecisionProvider,
    HeuristicProvider,
    Plan,
    SearchHit,
)
from scheduler.dsl.parser import parse_policy, render_policy
from scheduler.errors import ExhaustedRefinements, PlanInvalidated
from scheduler.metrics import goal_improvement_pct, goal_metric, relative_gain_pct
from scheduler.models import MetricsReport, PerformanceDelta
from services.analysis_engine import WorkloadProfile

load_dotenv()

logger = logging.getLogger(__name__)

CONFIDENCE_FOR_DEEP_PROFILE = 0.8
MIN_GAIN_PCT = 2.0
FAMILY_PROBES = {
    "build-dag": ["dag", "durations"],
    "latency-chain": ["wakeups", "durations"],
    "batch-longtail": ["durations"],
    "custom": ["dag", "durations", "wakeups"],
}


class ExecutionResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    plan: Plan
    policy_id: Optional[str] = None
    policy_name: str
    source: str
    attempts: Tuple[Tuple[str, ...], ...] = ()
    verdict: str
    canary: Optional[Dict[str, Any]] = None


class IterationRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    index: int
    profile: WorkloadProfile
    plan: Plan
    verdict: str
    attempts: Tuple[Tuple[str, ...], ...] = ()
    policy_id: Optional[str] = None
    policy_name: Optional[str] = None
    deployment_id: Optional[str] = None
    phase: Optional[str] = None
    delta: Optional[Dict[str, float]] = None
    baseline_metric: Optional[float] = None
    candidate_metric: Optional[float] = None
    live_metric: Optional[float] = None
    live_policy_id: Optional[str] = None
    improvement_pct: float = 0.0
    actions: Tuple[str, ...] = ()
    hint: Optional[str] = None


class AgentState(TypedDict, total=False):
    session_id: str
    max_iters: int
    iteration: int
    hint: Optional[str]
    excluded: List[str]
    profile: Optional[Dict[str, Any]]
    plan: Optional[Dict[str, Any]]
    result: Optional[Dict[str, Any]]
    records: Annotated[List[Dict[str, Any]], operator.add]
    live_metric: Optional[float]
    live_policy_id: Optional[str]


def _mean_goal(goal: str, windows: Sequence[Dict[str, Any]], role: str) -> Optional[float]:
    values = [goal_metric(goal, MetricsReport.model_validate(w[role])) for w in windows]
    return sum(values) / len(values) if values else None


def _better(goal: str, candidate: float, incumbent: float) -> bool:
    return candidate > incumbent if goal == "max_throughput" else candidate < incumbent


class SchedAgent:
    """
    Drives one session of the control plane.

    Args:
        client: JSON-RPC client of the server.
        provider: decision rules; the deterministic heuristic by default.
        max_refinements: automatic repairs after a failed validation.
        canary: overrides for deploy.canary (threshold_pct, trip_limit,
            windows, window_size, work_jitter).
    """

    def __init__(
        self,
        client: RpcClient,
        provider: Optional[DecisionProvider] = None,
        max_refinements: int = MAX_REFINEMENTS,
        canary: Optional[Dict[str, Any]] = None,
    ):
        self.client = client
        self.provider = provider or HeuristicProvider()
        self.max_refinements = max_refinements
        self.canary = dict(canary or {})
        self.memory = MemorySaver()
        self.app = self._build_graph().compile(checkpointer=self.memory)

    # Stages ---------------------------------------------------------------

    def observe(self, session_id: str) -> WorkloadProfile:
        """Summary first; deep probes only when the classification is unsure."""
        summary = self.client.call("summarize", session_id)
        profile = WorkloadProfile.model_validate(self.client.call("classify", session_id, summary=summary))
        if profile.confidence < CONFIDENCE_FOR_DEEP_PROFILE:
            probes = FAMILY_PROBES.get(summary["family_guess"], FAMILY_PROBES["custom"])
            report = self.client.call("profile_deep", session_id, probes=probes)
            profile = WorkloadProfile.model_validate(
                self.client.call("classify", session_id, summary=summary, report=report)
            )
        logger.info("observed %s (goal %s, confidence %.2f)", profile.family, profile.optimization_goal, profile.confidence)
        return profile

    def plan(self, session_id: str, profile: WorkloadProfile, hint: Optional[str] = None,
             excluded: Sequence[str] = ()) -> Plan:
        query = self.provider.query(profile.family, profile.optimization_goal)
        found = self.client.call("repo.search", session_id, query=query, k=5)["hits"]
        hits: List[SearchHit] = []
        for hit in found:
            if hit["id"] in excluded:
                continue
            view = self.client.call("repo.get", session_id, policy_id=hit["id"])
            hits.append(SearchHit(id=hit["id"], name=hit["name"], status=hit["status"],
                                  normalized=hit["normalized"], source=view["source"]))
            break
        plan = self.provider.plan(profile.optimization_goal, hits, escalation=1 if hint == "escalate" else 0)
        logger.info("plan: %s (%s)", plan.kind, plan.rationale)
        return plan

    def _materialize(self, session_id: str, plan: Plan) -> Dict[str, Any]:
        variant = plan.variant
        if variant.kind == "compose":
            return self.client.call("policy.compose", session_id, primitives=list(variant.fragments),
                                    weights=list(variant.weights), preemptive=variant.preemptive,
                                    slice_us=variant.slice_us)
        try:
            record = self.client.call("repo.get", session_id, policy_id=variant.policy_id)
        except RemoteError as exc:
            if exc.kind == "UnknownPolicy":
                raise PlanInvalidated(f"plan references unknown policy {variant.policy_id}",
                                      {"policy_id": variant.policy_id}) from None
            raise
        if record["status"] == "retired":
            raise PlanInvalidated(f"plan references retired policy {record['name']}", {"policy_id": variant.policy_id})
        if variant.kind == "configure":
            return self.client.call("policy.configure", session_id, policy_id=variant.policy_id,
                                    assignments=dict(variant.assignments))
        return self.client.call("policy.patch", session_id, policy_id=variant.policy_id,
                                edits=[e.model_dump(exclude_none=True) for e in variant.edits])

    def execute(self, plan: Plan, session_id: str, profile: WorkloadProfile) -> ExecutionResult:
        """
        Materialize, validate with up to ``max_refinements`` repairs, then
        deploy a canary with the token a passing validation yields.
        """
        materialized = self._materialize(session_id, plan)
        original = parse_policy(materialized["source"])
        current = original
        failures: List[Tuple[str, ...]] = []
        token = None
        for attempt in range(self.max_refinements + 1):
            verified = self.client.call("verify.pipeline", session_id, source=render_policy(current),
                                        goal=profile.optimization_goal)
            report = verified["report"]
            if report["verdict"] == "pass":
                token = verified["token"]
                break
            codes = tuple(f["code"] for stage in report["stages"] for f in stage["findings"] if f["severity"] == "error")
            failures.append(codes)
            logger.info("validation of %s failed: %s", current.name, ", ".join(codes))
            refined = self.provider.refine(original, failures) if attempt < self.max_refinements else None
            if refined is None:
                raise ExhaustedRefinements(
                    f"{original.name} failed validation after {len(failures)} attempts",
                    {"policy": original.name, "attempts": [list(c) for c in failures]},
                )
            current = refined

        canary = self.client.call("deploy.canary", session_id, token=token, record_outcome=False, **self.canary)
        return ExecutionResult(
            plan=plan,
            policy_id=canary["policy_id"],
            policy_name=current.name,
            source=render_policy(current),
            attempts=tuple(failures),
            verdict="pass",
            canary=canary,
        )

    def learn(self, record: IterationRecord, session_id: str) -> Tuple[Tuple[str, ...], Optional[str]]:
        """Repository actions for one iteration plus the hint for the next plan."""
        if record.deployment_id is None:
            return ("abandoned",), "escalate"
        view = self.client.call("repo.record_outcome", session_id, deployment_id=record.deployment_id)
        actions = ["recorded"]
        if record.phase == "Reverted":
            return ("recorded", "reverted"), "escalate"
        gain = goal_improvement_pct(record.profile.optimization_goal, PerformanceDelta(**record.delta)) if record.delta else 0.0
        if gain > 0 and view["status"] == "candidate":
            self.client.call("repo.promote", session_id, policy_id=record.policy_id)
            actions.append("promoted")
        hint = "escalate" if record.improvement_pct < MIN_GAIN_PCT else None
        return tuple(actions), hint

    # Graph ------------------------------------------------------------------

    def _observe_node(self, state: AgentState) -> AgentState:
        profile = self.observe(state["session_id"])
        return {"profile": profile.model_dump(mode="json")}

    def _plan_node(self, state: AgentState) -> AgentState:
        profile = WorkloadProfile.model_validate(state["profile"])
        plan = self.plan(state["session_id"], profile, state.get("hint"), state.get("excluded", []))
        return {"plan": plan.model_dump(mode="json")}

    def _execute_node(self, state: AgentState) -> AgentState:
        session_id = state["session_id"]
        profile = WorkloadProfile.model_validate(state["profile"])
        plan = Plan.model_validate(state["plan"])
        excluded = list(state.get("excluded", []))
        while True:
            try:
                result = self.execute(plan, session_id, profile)
                break
            except PlanInvalidated as exc:
                excluded.append(exc.details["policy_id"])
                plan = self.plan(session_id, profile, state.get("hint"), excluded)
                logger.info("plan invalidated (%s); replanned as %s", exc.message, plan.kind)
            except ExhaustedRefinements as exc:
                logger.warning("%s", exc.message)
                result = ExecutionResult(plan=plan, policy_name="", source="", verdict="fail",
                                         attempts=tuple(tuple(a) for a in exc.details["attempts"]))
                break
        return {"plan": plan.model_dump(mode="json"), "result": result.model_dump(mode="json"), "excluded": excluded}

    def _learn_node(self, state: AgentState) -> AgentState:
        session_id = state["session_id"]
        profile = WorkloadProfile.model_validate(state["profile"])
        result = ExecutionResult.model_validate(state["result"])
        goal = profile.optimization_goal
        live, live_policy = state.get("live_metric"), state.get("live_policy_id")

        fields: Dict[str, Any] = {}
        if result.canary is not None:
            canary = result.canary
            baseline = _mean_goal(goal, canary["windows"], "baseline")
            candidate = _mean_goal(goal, canary["windows"], "candidate")
            if live is None:
                live, live_policy = baseline, canary["baseline_id"]
            fields = {
                "deployment_id": canary["deployment_id"],
                "phase": canary["phase"],
                "delta": canary["delta"],
                "baseline_metric": baseline,
                "candidate_metric": candidate,
            }
        previous = live
        if fields.get("phase") == "Promoted" and _better(goal, fields["candidate_metric"], live):
            live, live_policy = fields["candidate_metric"], result.policy_id

        record = IterationRecord(
            index=state.get("iteration", 0),
            profile=profile,
            plan=result.plan,
            verdict=result.verdict,
            attempts=result.attempts,
            policy_id=result.policy_id,
            policy_name=result.policy_name or None,
            live_metric=live,
            live_policy_id=live_policy,
            improvement_pct=relative_gain_pct(goal, previous, live) if previous is not None else 0.0,
            **fields,
        )
        actions, hint = self.learn(record, session_id)
        record = record.model_copy(update={"actions": actions, "hint": hint})
        logger.info("iteration %d: %s %s, live %s (%+.2f%%), hint %s", record.index, record.plan.kind,
                    record.phase or record.verdict, live, record.improvement_pct, hint)
        return {
            "records": [record.model_dump(mode="json")],
            "iteration": record.index + 1,
            "hint": hint,
            "live_metric": live,
            "live_policy_id": live_policy,
        }

    def _should_start(self, state: AgentState) -> str:
        return "observe" if state["max_iters"] > 0 else END

    def _should_continue(self, state: AgentState) -> str:
        done = state["iteration"]
        if done >= state["max_iters"]:
            return END
        last = state["records"][-1]
        if done >= 2 and last["improvement_pct"] < MIN_GAIN_PCT:
            return END
        return "observe"

    def _build_graph(self) -> StateGraph:
        workflow = StateGraph(AgentState)
        workflow.add_node("observe", self._observe_node)
        workflow.add_node("plan", self._plan_node)
        workflow.add_node("execute", self._execute_node)
        workflow.add_node("learn", self._learn_node)
        workflow.add_conditional_edges(START, self._should_start, {"observe": "observe", END: END})
        workflow.add_edge("observe", "plan")
        workflow.add_edge("plan", "execute")
        workflow.add_edge("execute", "learn")
        workflow.add_conditional_edges("learn", self._should_continue, {"observe": "observe", END: END})
        return workflow

    def run_loop(self, session_id: str, max_iters: int = 3) -> List[IterationRecord]:
        if max_iters <= 0:
            return []
        config = {
            "configurable": {"thread_id": f"{session_id}:{uuid.uuid4().hex[:8]}"},
            "recursion_limit": 5 * max_iters + 5,
        }
        initial: AgentState = {
            "session_id": session_id,
            "max_iters": max_iters,
            "iteration": 0,
            "hint": None,
            "excluded": [],
            "records": [],
            "live_metric": None,
            "live_policy_id": None,
        }
        final = self.app.invoke(initial, config)
        return [IterationRecord.model_validate(r) for r in final["records"]]
