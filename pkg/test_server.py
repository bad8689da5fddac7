import json

import pytest
from fastapi.testclient import TestClient

from agents.client import HttpClient, InProcessClient, RemoteError
from backend.main import create_app
from backend.server import ControlPlane
from scheduler.dsl.library import compose
from scheduler.dsl.parser import render_policy
from scheduler.sim.engine import Violation, simulate

LJF_AGED = compose(["longest_first", "aging"], [1.0, 0.01], name="ljf_aged")


def rpc(plane, method, params=None, request_id=1):
    message = {"jsonrpc": "2.0", "id": request_id, "method": method}
    if params is not None:
        message["params"] = params
    return json.loads(plane.handle_text(json.dumps(message)))


# Protocol ------------------------------------------------------------------

def test_initialize_and_tool_listing(plane):
    init = rpc(plane, "initialize")["result"]
    assert init["protocolVersion"] == "2025-06-18"
    assert init["serverInfo"]["name"] == "schedcp"

    tools = rpc(plane, "tools/list")["result"]["tools"]
    assert len(tools) == 17
    by_name = {t["name"]: t for t in tools}
    assert by_name["verify.pipeline"]["cost"] == 50
    assert by_name["deploy.canary"]["costClass"] == "deploy" and by_name["deploy.canary"]["cost"] == 50
    assert by_name["sim.run"]["costClass"] != by_name["repo.get"]["costClass"]
    assert "inputSchema" in by_name["repo.search"] and "outputSchema" in by_name["repo.search"]


def test_protocol_errors(plane):
    unknown = rpc(plane, "tools/frobnicate")["error"]
    assert unknown["code"] == -32601

    parse = json.loads(plane.handle_text("{nope"))["error"]
    assert parse["code"] == -32700 and parse["data"]["kind"] == "ParseError"

    empty = json.loads(plane.handle_text("[]"))["error"]
    assert empty["code"] == -32600

    assert plane.handle({"jsonrpc": "2.0", "method": "ping"}) is None
    assert plane.handle({"method": "ping", "id": 4})["error"]["code"] == -32600


def test_batches_skip_notifications(plane):
    batch = [
        {"jsonrpc": "2.0", "id": 1, "method": "ping"},
        {"jsonrpc": "2.0", "method": "ping"},
        {"jsonrpc": "2.0", "id": 2, "method": "initialize"},
    ]
    replies = json.loads(plane.handle_text(json.dumps(batch)))
    assert [r["id"] for r in replies] == [1, 2]


def test_unexpected_exceptions_become_internal_errors(plane, monkeypatch):
    def broken(*args, **kwargs):
        raise RuntimeError("boom")

    monkeypatch.setattr(plane, "list_tools", broken)
    error = rpc(plane, "tools/list")["error"]
    assert error["code"] == -32603
    assert error["data"]["kind"] == "InternalError"


# Sessions and tools ---------------------------------------------------------

def test_session_from_a_named_suite(plane):
    opened = rpc(plane, "session/open", {"suite": "longtail", "cost_cap": 300})["result"]
    assert opened["cost_cap"] == 300
    assert opened["workload"]
    closed = rpc(plane, "session/close", {"session_id": opened["session_id"]})["result"]
    assert closed["session_id"] == opened["session_id"]
    error = rpc(plane, "session/close", {"session_id": opened["session_id"]})["error"]
    assert error["data"]["kind"] == "UnknownSession"


def test_tool_schema_violation(client, longtail_session):
    with pytest.raises(RemoteError) as excinfo:
        client.call("repo.search", longtail_session, query="batch", k=0)
    assert excinfo.value.kind == "SchemaViolation"
    assert excinfo.value.rpc_code == -32602

    with pytest.raises(RemoteError) as excinfo:
        client.call("sim.run", longtail_session, policy_id="x", source="priority = 1\n")
    assert excinfo.value.kind == "SchemaViolation"


def test_cost_cap_is_enforced_without_charging(client, longtail):
    sid = client.open_session(longtail.model_dump(mode="json"), cost_cap=10)
    with pytest.raises(RemoteError) as excinfo:
        client.call("sim.run", sid, source="priority = expected_runtime\n")
    assert excinfo.value.kind == "BudgetExhausted"
    assert client.call("session.status", sid)["cost_used"] == 1


def test_search_and_simulate(client, longtail_session):
    hits = client.call("repo.search", longtail_session, query="batch longtail", k=3)["hits"]
    assert hits[0]["name"] == "ljf"

    run = client.call("sim.run", longtail_session, policy_id=hits[0]["id"])
    assert run["metrics"]["makespan"] == 30_000_000
    assert run["violations"] == [] and not run["incomplete"]

    status = client.call("session.status", longtail_session)
    assert [c["tool"] for c in status["calls"]] == ["repo.search", "sim.run", "session.status"]
    assert status["cost_used"] == 1 + 20 + 1


def test_verify_then_deploy(client, longtail_session):
    composed = client.call("policy.compose", longtail_session, primitives=["longest_first", "aging"],
                           weights=[1.0, 0.01], name="ljf_aged")
    verified = client.call("verify.pipeline", longtail_session, source=composed["source"])
    assert verified["report"]["verdict"] == "pass"
    assert verified["token"]

    stored = client.call("repo.get", longtail_session, policy_id=composed["policy_id"])
    assert stored["target_families"] == ["batch-longtail"]

    state = client.call("deploy.canary", longtail_session, token=verified["token"], windows=2)
    assert state["phase"] == "Promoted"
    status = client.call("session.status", longtail_session)
    assert status["active_policy"] == composed["policy_id"]
    assert [c["cost"] for c in status["calls"] if c["tool"] == "deploy.canary"] == [50]

    # the canary already recorded its outcome
    with pytest.raises(RemoteError) as excinfo:
        client.call("repo.record_outcome", longtail_session, deployment_id=state["deployment_id"])
    assert excinfo.value.kind == "DuplicateDeployment"
    delta = client.call("feedback.report", longtail_session, deployment_id=state["deployment_id"])
    assert delta["avg_completion_pct"] < 0


def test_failed_verification_issues_no_token(client, longtail_session):
    verified = client.call("verify.pipeline", longtail_session, source="name = greedy\npriority = expected_runtime\n")
    assert verified["report"]["verdict"] == "fail"
    assert verified["token"] is None


def test_lost_task_is_caught_in_dynamic_validation(config, signer, longtail):
    def lossy(workload, policy, seed=0):
        result = simulate(workload, policy, seed=seed)
        lost = Violation(code="TASK_LOST", time=0, message="task dropped by fault injection")
        return result.model_copy(update={"violations": result.violations + (lost,)})

    client = InProcessClient(ControlPlane(config, signer=signer, simulate_fn=lossy))
    sid = client.open_session(longtail.model_dump(mode="json"))
    verified = client.call("verify.pipeline", sid, source=render_policy(LJF_AGED))

    report = verified["report"]
    assert report["verdict"] == "fail"
    assert [s["passed"] for s in report["stages"]] == [True, True, False]
    assert "TASK_LOST" in [f["code"] for f in report["stages"][2]["findings"]]
    assert verified["token"] is None


def test_unknown_session(client):
    with pytest.raises(RemoteError) as excinfo:
        client.call("session.status", "missing")
    assert excinfo.value.kind == "UnknownSession"


# HTTP transport -------------------------------------------------------------

def test_http_app(plane, longtail):
    http = TestClient(create_app(plane=plane))

    health = http.get("/health").json()
    assert health["status"] == "healthy"
    assert health["policies"] == len(plane.repository)
    assert len(http.get("/tools").json()["tools"]) == 17

    reply = http.post("/rpc", content=json.dumps({"jsonrpc": "2.0", "id": 9, "method": "ping"}))
    assert reply.json() == {"jsonrpc": "2.0", "id": 9, "result": {}}
    assert http.post("/rpc", content=json.dumps({"jsonrpc": "2.0", "method": "ping"})).status_code == 204

    client = HttpClient(client=http)
    sid = client.open_session(longtail.model_dump(mode="json"))
    summary = client.call("summarize", sid)
    assert summary["family_guess"] == "batch-longtail"
    assert http.get("/health").json()["sessions"] == 1


def test_cors_follows_the_config(plane, config, signer):
    preflight = {"Origin": "http://dashboard.local", "Access-Control-Request-Method": "POST"}

    closed = TestClient(create_app(plane=plane))
    assert "access-control-allow-origin" not in closed.options("/rpc", headers=preflight).headers

    allowed = config.model_copy(update={"cors_origins": ["http://dashboard.local"]})
    opened = TestClient(create_app(plane=ControlPlane(allowed, signer=signer)))
    reply = opened.options("/rpc", headers=preflight)
    assert reply.headers["access-control-allow-origin"] == "http://dashboard.local"
