"""
The control plane: tool dispatch behind a JSON-RPC 2.0 surface.

``ControlPlane.call_tool`` validates arguments, charges the session and
validates the result against the tool's output schema. ``handle`` speaks
JSON-RPC (``initialize``, ``tools/list``, ``tools/call``, ``session/open``,
``session/close``, ``ping`` and every tool name as a method); ``serve_stdio``
runs the newline-delimited stdio transport. Errors always come back as
envelopes, never as transport failures.
"""

import json
import logging
import sys
from typing import Any, Callable, Dict, List, Optional, TextIO, Union

from pydantic import BaseModel, ValidationError

from backend.config import ServerConfig
from backend.tools import (
    MaterializedPolicy,
    PolicyView,
    SearchHit,
    SessionOpenParams,
    ToolDescriptor,
    get_tool,
    list_tools,
)
from scheduler.dsl.library import apply_patch, builtin, compose, with_params
from scheduler.dsl.parser import parse_policy, render_policy
from scheduler.dsl.policy import PolicySpec, policy_id
from scheduler.errors import InvalidSpec, SchedCPError, SchemaViolation, UnboundSession
from scheduler.models import FAMILY_GOALS, WorkloadSpec
from scheduler.sim.engine import SimulationCache, simulate
from scheduler.sim.workloads import suite as named_suite
from services.analysis_engine import AnalysisEngine
from services.canary import DeploymentRegistry
from services.policy_repository import PolicyRecord, PolicyRepository
from services.probes import SimulatorProbeSource
from services.sessions import Session, SessionManager
from services.tokens import TokenSigner, load_signing_key
from services.verifier import ExecutionVerifier, default_suite

logger = logging.getLogger(__name__)

JSONRPC = "2.0"
PROTOCOL_VERSION = "2025-06-18"
SERVER_INFO = {"name": "schedcp", "version": "0.3.0"}

PARSE_ERROR = -32700
INVALID_REQUEST = -32600
INTERNAL_ERROR = -32603


def _error(request_id: Any, code: int, message: str, kind: str, details: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    return {
        "jsonrpc": JSONRPC,
        "id": request_id,
        "error": {"code": code, "message": message, "data": {"kind": kind, "details": details or {}}},
    }


def _view(record: PolicyRecord) -> PolicyView:
    return PolicyView(
        id=record.id,
        name=record.spec.name,
        status=record.status,
        description=record.description,
        target_families=list(record.target_families),
        tags=list(record.spec.tags),
        source=render_policy(record.spec),
        outcomes=len(record.outcomes),
        antipatterns=list(record.antipatterns),
    )


def _materialized(spec: PolicySpec) -> MaterializedPolicy:
    return MaterializedPolicy(policy_id=policy_id(spec), name=spec.name, source=render_policy(spec))


class ControlPlane:
    """
    Wires the services together and dispatches tool calls.

    Args:
        config: server configuration.
        repository: policy store; opened at ``config.repo_path`` when omitted.
        signer: token signer; keyed from ``config.signing_key_env`` when omitted.
        simulate_fn: simulator entry point shared by verifier and canary
            (a seam for fault injection).
    """

    def __init__(
        self,
        config: Optional[ServerConfig] = None,
        repository: Optional[PolicyRepository] = None,
        signer: Optional[TokenSigner] = None,
        simulate_fn: Callable = simulate,
    ):
        self.config = config or ServerConfig()
        self.repository = repository or PolicyRepository(self.config.repo_path)
        self.signer = signer or TokenSigner(load_signing_key(self.config.signing_key_env), self.config.token_ttl_s)
        self.cache = SimulationCache(simulate_fn=simulate_fn)
        self.verifier = ExecutionVerifier(self.config.verifier, self.cache)
        self.registry = DeploymentRegistry(self.repository, self.signer, self.cache, self.config.canary)
        self.engine = AnalysisEngine(registry=self.registry)
        self.sessions = SessionManager(self.config.cost_cap, self.config.context_budget)
        self._handlers: Dict[str, Callable[[Session, BaseModel], Any]] = {
            tool.name: getattr(self, "_tool_" + tool.name.replace(".", "_")) for tool in list_tools()
        }

    # Sessions ---------------------------------------------------------------

    def open_session(
        self,
        workload: Union[WorkloadSpec, Dict[str, Any], None] = None,
        cost_cap: Optional[int] = None,
        context_budget: Optional[int] = None,
    ) -> Session:
        if isinstance(workload, dict):
            workload = WorkloadSpec.model_validate(workload)
        source = SimulatorProbeSource(workload, seed=workload.seed) if workload is not None else None
        return self.sessions.open(source, cost_cap, context_budget)

    def close_session(self, session_id: str) -> Dict[str, Any]:
        return self.sessions.close(session_id)

    # Tools ------------------------------------------------------------------

    def list_tools(self) -> List[Dict[str, Any]]:
        return [tool.listing() for tool in list_tools()]

    def call_tool(self, name: str, arguments: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        """Validate, charge, run and validate again; returns the JSON-ready result."""
        tool = get_tool(name)
        args = self._validate_input(tool, arguments or {})
        session = self.sessions.get(args.session_id)
        with session.lock:
            start = session.cost_used
            if not tool.self_charged:
                session.charge(tool.name, tool.cost)
            try:
                result = self._handlers[tool.name](session, args)
                output = self._validate_output(tool, result)
            except SchedCPError as exc:
                logger.info("tool %s failed: %s", tool.name, exc.message,
                            extra={"session": session.id, "tool": tool.name, "cost": session.cost_used - start, "outcome": exc.kind})
                raise
            logger.info("tool %s ok", tool.name,
                        extra={"session": session.id, "tool": tool.name, "cost": session.cost_used - start, "outcome": "ok"})
            return output

    def _validate_input(self, tool: ToolDescriptor, arguments: Dict[str, Any]) -> BaseModel:
        try:
            return tool.input_model.model_validate(arguments)
        except ValidationError as exc:
            raise SchemaViolation(
                f"arguments of {tool.name} do not match its input schema",
                {"tool": tool.name, "errors": exc.errors(include_url=False, include_context=False)},
            ) from None

    def _validate_output(self, tool: ToolDescriptor, result: Any) -> Dict[str, Any]:
        payload = result.model_dump(mode="json") if isinstance(result, BaseModel) else result
        try:
            return tool.output_model.model_validate(payload).model_dump(mode="json")
        except ValidationError as exc:
            raise SchemaViolation(
                f"result of {tool.name} does not match its output schema",
                {"tool": tool.name, "errors": exc.errors(include_url=False, include_context=False)},
            ) from None

    # Helpers ----------------------------------------------------------------

    def baseline_spec(self) -> PolicySpec:
        record = self.repository.find_by_name(self.config.baseline)
        return record.spec if record is not None else builtin(self.config.baseline)

    def _workload(self, session: Session) -> WorkloadSpec:
        if session.workload is None:
            raise UnboundSession(f"session {session.id} has no workload", {"session_id": session.id})
        return session.workload

    def _resolve(self, args) -> PolicySpec:
        if args.policy_id is not None:
            return self.repository.get(args.policy_id).spec
        try:
            return parse_policy(args.source)
        except SchedCPError as exc:
            raise InvalidSpec(f"policy rejected: {exc.message}", {"cause": exc.kind, **exc.details}) from None

    def _goal(self, session: Session, workload: WorkloadSpec) -> str:
        if session.profile is not None:
            return session.profile.optimization_goal
        return FAMILY_GOALS[workload.family]

    # Handlers ---------------------------------------------------------------

    def _tool_summarize(self, session, args):
        return self.engine.summarize(session, args.budget_bytes)

    def _tool_profile_deep(self, session, args):
        return self.engine.profile_deep(session, args.probes, args.top_k)

    def _tool_classify(self, session, args):
        profile = self.engine.classify(args.summary, args.report)
        session.profile = profile
        return profile

    def _tool_feedback_report(self, session, args):
        return self.engine.report_feedback(args.deployment_id)

    def _tool_repo_search(self, session, args):
        hits = self.repository.normalized_search(args.query, args.k)
        return {
            "query": args.query,
            "hits": [
                SearchHit(id=r.id, name=r.spec.name, status=r.status, description=r.description,
                          score=round(score, 6), normalized=round(norm, 6))
                for r, score, norm in hits
            ],
        }

    def _tool_repo_get(self, session, args):
        return _view(self.repository.get(args.policy_id))

    def _tool_repo_add(self, session, args):
        return _view(self.repository.add(args.source, args.description, args.target_families))

    def _tool_repo_record_outcome(self, session, args):
        state = self.registry.get(args.deployment_id)
        self.registry.record(state)
        return _view(self.repository.get(state.policy_id))

    def _tool_repo_promote(self, session, args):
        return _view(self.repository.promote(args.policy_id))

    def _tool_repo_retire(self, session, args):
        return _view(self.repository.retire(args.policy_id, args.reason))

    def _tool_policy_configure(self, session, args):
        return _materialized(with_params(self.repository.get(args.policy_id).spec, args.assignments))

    def _tool_policy_patch(self, session, args):
        return _materialized(apply_patch(self.repository.get(args.policy_id).spec, args.edits))

    def _tool_policy_compose(self, session, args):
        return _materialized(compose(args.primitives, args.weights, args.name, args.preemptive, args.slice_us))

    def _tool_sim_run(self, session, args):
        workload = self._workload(session)
        result = self.cache.run(workload, self._resolve(args), args.seed)
        return {
            "workload": result.workload,
            "policy": result.policy,
            "policy_id": result.policy_id,
            "seed": result.seed,
            "metrics": result.metrics,
            "violations": [v.model_dump() for v in result.violations],
            "incomplete": result.incomplete,
        }

    def _tool_verify_pipeline(self, session, args):
        workload = self._workload(session)
        spec = self._resolve(args)
        report = self.verifier.run_pipeline(
            spec,
            default_suite(workload, workload.seed),
            self.baseline_spec(),
            goal=args.goal or self._goal(session, workload),
            family=workload.family,
        )
        token = None
        if report.verdict == "pass":
            # deployable policies live in the repository
            self.repository.add(spec, target_families=[workload.family])
            token = self.signer.issue(report).to_wire()
        return {"report": report, "token": token}

    def _tool_deploy_canary(self, session, args):
        workload = self._workload(session)
        fields = {"threshold_pct", "trip_limit", "windows", "window_size", "work_jitter"}
        overrides = {k: v for k, v in args.model_dump(include=fields).items() if v is not None}
        state = self.registry.deploy(
            args.token,
            workload,
            self.baseline_spec(),
            config=self.config.canary.model_copy(update=overrides),
            goal=self._goal(session, workload),
            fingerprint=session.profile.fingerprint if session.profile is not None else None,
            record_outcome=args.record_outcome,
        )
        session.deployments.append(state.deployment_id)
        session.active_policy = state.active_policy_id
        return state

    def _tool_session_status(self, session, args):
        return session.status()

    # JSON-RPC ---------------------------------------------------------------

    def _session_open(self, params: Dict[str, Any]) -> Dict[str, Any]:
        try:
            request = SessionOpenParams.model_validate(params)
        except ValidationError as exc:
            raise SchemaViolation("session/open params do not match their schema",
                                  {"errors": exc.errors(include_url=False, include_context=False)}) from None
        workload = request.workload
        if workload is None and request.suite:
            workload = named_suite(request.suite, request.seed)[0]
        session = self.open_session(workload, request.cost_cap, request.context_budget)
        return {"session_id": session.id, "workload": session.workload.name if session.workload else None,
                "cost_cap": session.cost_cap, "context_budget": session.context_budget}

    def _dispatch(self, method: str, params: Dict[str, Any]) -> Any:
        if method == "initialize":
            return {"protocolVersion": PROTOCOL_VERSION, "capabilities": {"tools": {}}, "serverInfo": SERVER_INFO}
        if method == "ping":
            return {}
        if method == "tools/list":
            return {"tools": self.list_tools()}
        if method == "tools/call":
            name = params.get("name")
            if not isinstance(name, str):
                raise SchemaViolation("tools/call needs a tool name", {"params": sorted(params)})
            return self.call_tool(name, params.get("arguments") or {})
        if method == "session/open":
            return self._session_open(params)
        if method == "session/close":
            return self.close_session(str(params.get("session_id", "")))
        return self.call_tool(method, params)

    def handle(self, request: Any) -> Optional[Dict[str, Any]]:
        """One JSON-RPC request object in, one response out (None for notifications)."""
        if not isinstance(request, dict) or request.get("jsonrpc") != JSONRPC or not isinstance(request.get("method"), str):
            request_id = request.get("id") if isinstance(request, dict) else None
            return _error(request_id, INVALID_REQUEST, "invalid JSON-RPC request", "InvalidRequest")
        request_id = request.get("id")
        params = request.get("params") or {}
        if not isinstance(params, dict):
            return _error(request_id, INVALID_REQUEST, "params must be an object", "InvalidRequest")
        try:
            result = self._dispatch(request["method"], params)
        except SchedCPError as exc:
            response = {"jsonrpc": JSONRPC, "id": request_id, "error": exc.to_envelope()}
        except Exception:
            logger.exception("internal error in %s", request["method"])
            response = _error(request_id, INTERNAL_ERROR, "internal error", "InternalError")
        else:
            response = {"jsonrpc": JSONRPC, "id": request_id, "result": result}
        if "id" not in request:
            return None
        return response

    def handle_text(self, text: str) -> Optional[str]:
        """Decode, dispatch (batches included) and encode; bad JSON yields a parse error."""
        try:
            payload = json.loads(text)
        except (ValueError, TypeError):
            return json.dumps(_error(None, PARSE_ERROR, "parse error", "ParseError"))
        if isinstance(payload, list):
            if not payload:
                return json.dumps(_error(None, INVALID_REQUEST, "empty batch", "InvalidRequest"))
            responses = [r for r in (self.handle(item) for item in payload) if r is not None]
            return json.dumps(responses) if responses else None
        response = self.handle(payload)
        return json.dumps(response) if response is not None else None

    def serve_stdio(self, stdin: TextIO = sys.stdin, stdout: TextIO = sys.stdout) -> None:
        logger.info("schedcp serving JSON-RPC on stdio")
        for line in stdin:
            if not line.strip():
                continue
            reply = self.handle_text(line)
            if reply is not None:
                stdout.write(reply + "\n")
                stdout.flush()
