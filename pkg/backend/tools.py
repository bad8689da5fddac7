"""
Tool descriptors: the name, input schema, output schema and cost class of
every operation the control plane exposes. Schemas are the JSON Schemas of
the pydantic models below; the server validates all traffic against them.
"""

from typing import Any, Dict, List, Literal, Optional, Tuple, Type

from pydantic import BaseModel, ConfigDict, Field, model_validator

from scheduler.dsl.library import PatchEdit
from scheduler.errors import UnknownTool
from scheduler.models import Goal, MetricsReport, PerformanceDelta, WorkloadSpec
from services.analysis_engine import ProfileReport, WorkloadProfile, WorkloadSummary
from services.canary import CanaryState
from services.sessions import COST_DEPLOY, COST_LIGHT, COST_PROBE, COST_SIMULATE, COST_SUMMARY, COST_VERIFY
from services.verifier import ValidationReport

CostClass = Literal["summary", "probe", "simulate", "verify", "deploy", "light"]

COSTS: Dict[str, int] = {
    "summary": COST_SUMMARY,
    "probe": COST_PROBE,
    "simulate": COST_SIMULATE,
    "verify": COST_VERIFY,
    "deploy": COST_DEPLOY,
    "light": COST_LIGHT,
}


class _Input(BaseModel):
    model_config = ConfigDict(extra="forbid")


class _SessionInput(_Input):
    session_id: str = Field(min_length=1)


class _PolicyRef(_SessionInput):
    """A repository id or DSL source; exactly one."""

    policy_id: Optional[str] = None
    source: Optional[str] = None

    @model_validator(mode="after")
    def _one_of(self) -> "_PolicyRef":
        if (self.policy_id is None) == (self.source is None):
            raise ValueError("give exactly one of policy_id or source")
        return self


# Inputs ---------------------------------------------------------------------

class SummarizeInput(_SessionInput):
    budget_bytes: Optional[int] = Field(default=None, ge=0)


class ProfileDeepInput(_SessionInput):
    probes: List[str] = Field(min_length=1)
    top_k: int = Field(default=5, ge=1, le=100)


class ClassifyInput(_SessionInput):
    summary: WorkloadSummary
    report: Optional[ProfileReport] = None


class FeedbackInput(_SessionInput):
    deployment_id: str


class RepoSearchInput(_SessionInput):
    query: str
    k: int = Field(default=5, ge=1, le=50)


class RepoGetInput(_SessionInput):
    policy_id: str


class RepoAddInput(_SessionInput):
    source: str = Field(min_length=1)
    description: Optional[str] = None
    target_families: List[str] = Field(default_factory=list)


class RecordOutcomeInput(_SessionInput):
    deployment_id: str


class RepoPromoteInput(_SessionInput):
    policy_id: str


class RepoRetireInput(_SessionInput):
    policy_id: str
    reason: Optional[str] = None


class ComposeInput(_SessionInput):
    primitives: List[str] = Field(min_length=1)
    weights: List[float] = Field(min_length=1)
    name: Optional[str] = None
    preemptive: bool = False
    slice_us: Optional[int] = None


class PatchInput(_SessionInput):
    policy_id: str
    edits: List[PatchEdit] = Field(min_length=1)


class ConfigureInput(_SessionInput):
    policy_id: str
    assignments: Dict[str, float] = Field(default_factory=dict)


class SimRunInput(_PolicyRef):
    seed: Optional[int] = Field(default=None, ge=0)


class VerifyInput(_PolicyRef):
    # defaults to the goal of the session's last classification
    goal: Optional[Goal] = None


class DeployInput(_SessionInput):
    token: str = Field(min_length=1)
    threshold_pct: Optional[float] = Field(default=None, ge=0)
    trip_limit: Optional[int] = Field(default=None, ge=1)
    windows: Optional[int] = Field(default=None, ge=1)
    window_size: Optional[int] = Field(default=None, ge=0)
    work_jitter: Optional[float] = Field(default=None, ge=0, le=1)
    record_outcome: bool = True


class SessionStatusInput(_SessionInput):
    pass


# Outputs --------------------------------------------------------------------

class _Output(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PolicyView(_Output):
    id: str
    name: str
    status: str
    description: str
    target_families: List[str]
    tags: List[str]
    source: str
    outcomes: int
    antipatterns: List[str]


class SearchHit(_Output):
    id: str
    name: str
    status: str
    description: str
    score: float
    normalized: float


class SearchOutput(_Output):
    query: str
    hits: List[SearchHit]


class MaterializedPolicy(_Output):
    policy_id: str
    name: str
    source: str


class SimRunOutput(_Output):
    workload: str
    policy: str
    policy_id: str
    seed: int
    metrics: Optional[MetricsReport]
    violations: List[Dict[str, Any]]
    incomplete: bool


class VerifyOutput(_Output):
    report: ValidationReport
    token: Optional[str] = None


class SessionStatusOutput(_Output):
    session_id: str
    workload: Optional[str]
    cost_used: int
    cost_cap: int
    context_budget: int
    deployments: List[str]
    active_policy: Optional[str]
    calls: List[Dict[str, Any]]


class ToolDescriptor(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    name: str
    description: str
    input_model: Type[BaseModel]
    output_model: Type[BaseModel]
    cost_class: CostClass
    # charged by the analysis engine itself, per call or per probe
    self_charged: bool = False

    @property
    def cost(self) -> int:
        return COSTS[self.cost_class]

    def listing(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "description": self.description,
            "inputSchema": self.input_model.model_json_schema(),
            "outputSchema": self.output_model.model_json_schema(),
            "costClass": self.cost_class,
            "cost": self.cost,
        }


def _tool(name, description, input_model, output_model, cost_class="light", self_charged=False) -> ToolDescriptor:
    return ToolDescriptor(name=name, description=description, input_model=input_model,
                          output_model=output_model, cost_class=cost_class, self_charged=self_charged)


TOOLS: Tuple[ToolDescriptor, ...] = (
    _tool("summarize", "Tier-1 workload summary capped at budget_bytes.",
          SummarizeInput, WorkloadSummary, "summary", self_charged=True),
    _tool("profile_deep", "Tier-2 probes over the session workload; cost is per probe.",
          ProfileDeepInput, ProfileReport, "probe", self_charged=True),
    _tool("classify", "Workload profile (family, goal, confidence) from a summary and optional probe report.",
          ClassifyInput, WorkloadProfile),
    _tool("feedback.report", "Post-deployment performance delta of a canary.", FeedbackInput, PerformanceDelta),
    _tool("repo.search", "BM25 search of the policy repository, with scores normalized by self-match.",
          RepoSearchInput, SearchOutput),
    _tool("repo.get", "One policy record with its DSL source.", RepoGetInput, PolicyView),
    _tool("repo.add", "Register a policy from DSL source as a candidate.", RepoAddInput, PolicyView),
    _tool("repo.record_outcome", "Record a closed deployment's outcome against its policy.",
          RecordOutcomeInput, PolicyView),
    _tool("repo.promote", "Promote a candidate with a positive outcome.", RepoPromoteInput, PolicyView),
    _tool("repo.retire", "Retire a policy.", RepoRetireInput, PolicyView),
    _tool("policy.configure", "New parameter values for an existing policy.", ConfigureInput, MaterializedPolicy),
    _tool("policy.patch", "Apply edits to an existing policy.", PatchInput, MaterializedPolicy),
    _tool("policy.compose", "Weighted sum of library fragments as a new policy.", ComposeInput, MaterializedPolicy),
    _tool("sim.run", "Simulate a policy on the session workload.", SimRunInput, SimRunOutput, "simulate"),
    _tool("verify.pipeline", "Structural, starvation and dynamic validation; a pass carries a deployment token.",
          VerifyInput, VerifyOutput, "verify"),
    _tool("deploy.canary", "Canary deployment gated by a deployment token.", DeployInput, CanaryState, "deploy"),
    _tool("session.status", "Cost, budget, deployments and call log of the session.",
          SessionStatusInput, SessionStatusOutput),
)

_BY_NAME = {tool.name: tool for tool in TOOLS}


def get_tool(name: str) -> ToolDescriptor:
    try:
        return _BY_NAME[name]
    except KeyError:
        raise UnknownTool(f"unknown tool '{name}'", {"tool": name}) from None


def list_tools() -> List[ToolDescriptor]:
    return list(TOOLS)


class SessionOpenParams(_Input):
    """Params of ``session/open``: an inline workload or a named generated suite."""

    workload: Optional[WorkloadSpec] = None
    suite: Optional[str] = None
    seed: int = Field(default=0, ge=0)
    cost_cap: Optional[int] = Field(default=None, gt=0)
    context_budget: Optional[int] = Field(default=None, ge=0)
