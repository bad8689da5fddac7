"""
Agent loop tests: the heuristic provider on its own, then the agent against an
in-process control plane.
"""

import pytest

from agents.client import InProcessClient, RemoteError
from agents.core.agent import IterationRecord, SchedAgent
from agents.core.provider import ComposeNew, ConfigureExisting, HeuristicProvider, Plan, SearchHit
from backend.config import ServerConfig
from backend.server import ControlPlane
from scheduler.dsl.expr import render_expr
from scheduler.dsl.library import builtin
from scheduler.dsl.parser import render_policy
from scheduler.dsl.policy import policy_id
from scheduler.errors import ExhaustedRefinements, PlanInvalidated
from scheduler.models import TaskSpec, WorkloadSpec
from scheduler.sim.workloads import straggler_longtail
from services.verifier import VerifierConfig

FAST_CANARY = {"windows": 2}


def hit(name: str, normalized: float) -> SearchHit:
    spec = builtin(name)
    return SearchHit(id=policy_id(spec), name=name, status="candidate", normalized=normalized,
                     source=render_policy(spec))


def compose_plan(*fragments: str) -> Plan:
    return Plan(
        variant=ComposeNew(fragments=fragments, weights=tuple(1.0 for _ in fragments)),
        rationale="test",
        direction="decrease",
    )


# Provider ------------------------------------------------------------------

def test_queries_per_family():
    provider = HeuristicProvider()
    assert provider.query("batch-longtail", "min_avg_completion") == "batch longtail"
    assert provider.query("unheard-of", "max_throughput") == "throughput"


def test_plan_levels():
    provider = HeuristicProvider()

    configure = provider.plan("min_p99", [hit("fair_vruntime", 0.9)])
    assert configure.kind == "configure"
    assert configure.variant.assignments == {"slice_base": 2000.0}

    patch = provider.plan("min_avg_completion", [hit("fifo", 0.5)])
    assert patch.kind == "patch"
    assert patch.variant.edits[0].expr == "-arrival_time + expected_runtime"

    # ljf already has the key term: nothing to patch
    assert provider.plan("min_avg_completion", [hit("ljf", 0.5)]).kind == "configure"
    assert provider.plan("min_avg_completion", [hit("ljf", 0.5)], escalation=1).kind == "compose"

    compose = provider.plan("min_makespan", [])
    assert compose.kind == "compose"
    assert compose.variant.fragments == ("longest_first", "aging")
    assert compose.score == 0.0

    latency = provider.plan("min_p99", [hit("fifo", 0.1)])
    assert latency.variant.preemptive and latency.variant.slice_us == 3000


def test_escalation_moves_one_level_down():
    provider = HeuristicProvider()
    assert provider.plan("min_avg_completion", [hit("fifo", 0.9)], escalation=1).kind == "patch"
    assert provider.plan("max_throughput", [hit("sjf", 0.9)], escalation=1).kind == "compose"


def test_refine():
    provider = HeuristicProvider()
    ljf = builtin("ljf")

    once = provider.refine(ljf, [("STARVATION",)])
    assert render_expr(once.priority_expr) == "expected_runtime + 0.01 * wait_time"
    twice = provider.refine(ljf, [("STARVATION",), ("UNFAIR",)])
    assert render_expr(twice.priority_expr) == "expected_runtime + 0.02 * wait_time"

    preempted = provider.refine(ljf, [("PERF_REGRESSION",)])
    assert preempted.preemptive
    assert render_expr(preempted.priority_expr) == "expected_runtime"

    assert provider.refine(ljf, [("DIVZERO",)]) is None
    assert provider.refine(ljf, []) is None


# Agent -------------------------------------------------------------------

@pytest.fixture
def agent(client):
    return SchedAgent(client, canary=FAST_CANARY)


def test_observe_trusts_a_confident_summary(agent, plane, longtail_session):
    profile = agent.observe(longtail_session)
    assert profile.family == "batch-longtail"
    assert profile.optimization_goal == "min_avg_completion"
    assert plane.sessions.get(longtail_session).tools_called() == ["summarize", "classify"]


def test_observe_profiles_an_unsure_workload(agent, client, plane):
    staggered = WorkloadSpec(
        name="staggered",
        tasks=tuple(TaskSpec(id=f"t{i}", arrival_time=i * 1_000, total_work=5_000) for i in range(6)),
        core_count=2,
    )
    sid = client.open_session(staggered.model_dump(mode="json"))
    profile = agent.observe(sid)
    assert profile.family == "custom"
    assert "profile_deep" in plane.sessions.get(sid).tools_called()


def test_plan_uses_the_repository(agent, longtail_session):
    profile = agent.observe(longtail_session)
    plan = agent.plan(longtail_session, profile)
    assert plan.kind in ("configure", "patch")
    assert plan.variant.policy_id == policy_id(builtin("ljf"))


def test_execute_refines_then_deploys(agent, longtail_session):
    profile = agent.observe(longtail_session)
    result = agent.execute(compose_plan("longest_first"), longtail_session, profile)

    assert result.verdict == "pass"
    assert result.attempts == (("STARVATION",),)
    assert "wait_time" in result.source
    assert result.canary["phase"] == "Promoted"


def test_retired_or_unknown_policy_invalidates_the_plan(agent, client, longtail_session):
    profile = agent.observe(longtail_session)
    ljf = policy_id(builtin("ljf"))
    client.call("repo.retire", longtail_session, policy_id=ljf, reason="test")

    stale = Plan(variant=ConfigureExisting(policy_id=ljf), rationale="stale", direction="decrease")
    with pytest.raises(PlanInvalidated):
        agent.execute(stale, longtail_session, profile)

    missing = Plan(variant=ConfigureExisting(policy_id="0" * 16), rationale="missing", direction="decrease")
    with pytest.raises(PlanInvalidated):
        agent.execute(missing, longtail_session, profile)


def test_refinements_run_out(tmp_path, signer, longtail):
    config = ServerConfig(repo_path=str(tmp_path / "strict"), verifier=VerifierConfig(starvation_bound_us=1))
    client = InProcessClient(ControlPlane(config, signer=signer))
    sid = client.open_session(longtail.model_dump(mode="json"))
    agent = SchedAgent(client, canary=FAST_CANARY)

    with pytest.raises(ExhaustedRefinements) as excinfo:
        agent.execute(compose_plan("longest_first"), sid, agent.observe(sid))
    assert len(excinfo.value.details["attempts"]) == 4


def test_zero_iterations(agent, longtail_session):
    assert agent.run_loop(longtail_session, max_iters=0) == []


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_loop_on_the_longtail_batch(agent, client, plane, seed):
    session = client.open_session(straggler_longtail(seed).model_dump(mode="json"))
    records = agent.run_loop(session, max_iters=3)

    assert len(records) == 2
    first, second = records
    assert first.phase == "Promoted"
    assert first.improvement_pct > 10
    assert "promoted" in first.actions
    assert second.improvement_pct < 2

    status = client.call("session.status", session)
    assert len(status["deployments"]) == 2

    # the deployed policy beats fair_vruntime and no window ran more than 10% worse than it
    assert second.live_metric < first.baseline_metric
    for deployment_id in status["deployments"]:
        for baseline, candidate in plane.registry.get(deployment_id).goal_values():
            assert candidate <= 1.10 * baseline


class FifoFirst(HeuristicProvider):
    """Picks plain fifo first, then the aged longest-first composition."""

    def __init__(self):
        super().__init__()
        self.calls = 0

    def plan(self, goal, hits, escalation=0):
        self.calls += 1
        if self.calls == 1:
            return Plan(variant=ConfigureExisting(policy_id=policy_id(builtin("fifo"))),
                        rationale="first choice", direction="decrease")
        return compose_plan("longest_first", "aging")


def test_a_weak_first_choice_is_replaced(client, longtail_session):
    provider = FifoFirst()
    agent = SchedAgent(client, provider=provider, canary=FAST_CANARY)
    records = agent.run_loop(longtail_session, max_iters=3)

    first, second = records[0], records[1]
    assert first.plan.kind == "configure"
    assert first.improvement_pct < 2
    assert first.hint == "escalate"

    assert second.plan.kind == "compose"
    assert second.plan.variant != first.plan.variant
    assert second.phase == "Promoted"
    assert second.improvement_pct > 5


def test_learn(agent, client, longtail_session):
    profile = agent.observe(longtail_session)
    plan = compose_plan("longest_first", "aging")
    abandoned = IterationRecord(index=0, profile=profile, plan=plan, verdict="fail")
    assert agent.learn(abandoned, longtail_session) == (("abandoned",), "escalate")

    result = agent.execute(plan, longtail_session, profile)
    canary = result.canary
    record = IterationRecord(
        index=1,
        profile=profile,
        plan=plan,
        verdict="pass",
        policy_id=result.policy_id,
        deployment_id=canary["deployment_id"],
        phase=canary["phase"],
        delta=canary["delta"],
        improvement_pct=11.0,
    )
    actions, hint = agent.learn(record, longtail_session)
    assert actions == ("recorded", "promoted")
    assert hint is None

    with pytest.raises(RemoteError) as excinfo:
        client.call("repo.record_outcome", longtail_session, deployment_id=canary["deployment_id"])
    assert excinfo.value.kind == "DuplicateDeployment"
